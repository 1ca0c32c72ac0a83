use rayon::prelude::*;

use super::kdtree::{squared_distance, KdTree};
use crate::error::{Error, Result};
use crate::sparse::{csr_from_triplets, SparseSym};

/// Samples `(x_i, f(x_i))` stored as rows of concatenated input and feature
/// coordinates.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<f64>,
    labels: Vec<usize>,
    d1: usize,
    d2: usize,
}

impl PointCloud {
    /// `inputs` is `n x d1` and `features` is `n x d2`, both row-major.
    pub fn new(inputs: &[f64], d1: usize, features: &[f64], d2: usize, labels: &[usize]) -> Result<Self> {
        let n = labels.len();
        if inputs.len() != n * d1 || features.len() != n * d2 {
            return Err(Error::structural(format!(
                "point cloud of {n} labels needs {} input and {} feature values, got {} and {}",
                n * d1,
                n * d2,
                inputs.len(),
                features.len()
            )));
        }
        if d1 + d2 == 0 {
            return Err(Error::structural("point cloud needs a positive dimension"));
        }
        let d = d1 + d2;
        let mut points = Vec::with_capacity(n * d);
        for i in 0..n {
            points.extend_from_slice(&inputs[i * d1..(i + 1) * d1]);
            points.extend_from_slice(&features[i * d2..(i + 1) * d2]);
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite coordinate in point {}", pos / d)));
        }
        Ok(PointCloud {
            points,
            labels: labels.to_vec(),
            d1,
            d2,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn input_dim(&self) -> usize {
        self.d1
    }

    pub fn feature_dim(&self) -> usize {
        self.d2
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }
}

/// Truncated neighbor lists with per-point local scales.
///
/// Rows normally hold `k` neighbors; a point in a class with fewer than
/// `k + 1` members keeps every other member of its class instead.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    pub neighbor_ids: Vec<Vec<usize>>,
    pub neighbor_dists: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
}

/// Finds the `k` nearest neighbors of every point and sets the local scale
/// from the `sigma_rank`-th neighbor.
pub fn build_neighbor_graph(
    cloud: &PointCloud,
    k: usize,
    class_masked: bool,
    sigma_rank: usize,
) -> Result<NeighborGraph> {
    if cloud.is_empty() {
        return Err(Error::structural("cannot build a neighbor graph over an empty cloud"));
    }
    let tree = if class_masked {
        KdTree::build_with_labels(cloud.points(), cloud.dim(), cloud.labels())?
    } else {
        KdTree::build(cloud.points(), cloud.dim())?
    };
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mask = class_masked.then(|| cloud.labels()[i]);
            match tree.knn_query(i, k, mask) {
                Err(Error::DegenerateSize { available, .. }) => tree.knn_query(i, available, mask),
                other => other,
            }
        })
        .collect::<Result<_>>()?;
    let (neighbor_ids, neighbor_dists) = rows.into_iter().unzip();
    let mut graph = NeighborGraph {
        k,
        neighbor_ids,
        neighbor_dists,
        sigma: Vec::new(),
    };
    graph.sigma = local_scale(&graph, sigma_rank);
    Ok(graph)
}

/// Distance to the `r`-th nearest neighbor of each point.
///
/// Short rows use their farthest neighbor. A zero scale (coincident points)
/// falls back to the smallest positive neighbor distance, then to 1.
pub fn local_scale(graph: &NeighborGraph, r: usize) -> Vec<f64> {
    graph
        .neighbor_dists
        .iter()
        .map(|dists| {
            let s = if r >= 1 && dists.len() >= r {
                dists[r - 1]
            } else {
                dists.last().copied().unwrap_or(0.0)
            };
            if s > 0.0 {
                s
            } else {
                dists.iter().copied().find(|&d| d > 0.0).unwrap_or(1.0)
            }
        })
        .collect()
}

/// Symmetric weight matrix `w_ij = exp(-|p_i - p_j|^2 / (sigma_i sigma_j))`
/// on the union of both neighbor directions, with unit diagonal.
pub fn build_weight_matrix(cloud: &PointCloud, graph: &NeighborGraph) -> Result<SparseSym> {
    let n = cloud.len();
    if graph.neighbor_ids.len() != n || graph.sigma.len() != n {
        return Err(Error::structural(format!(
            "neighbor graph has {} rows and {} scales for {n} points",
            graph.neighbor_ids.len(),
            graph.sigma.len()
        )));
    }
    let mut pairs: Vec<(usize, usize)> = graph
        .neighbor_ids
        .iter()
        .enumerate()
        .flat_map(|(i, ids)| ids.iter().map(move |&j| (i.min(j), i.max(j))))
        .filter(|&(i, j)| i != j)
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut triplets = Vec::with_capacity(2 * pairs.len() + n);
    for i in 0..n {
        triplets.push((i, i, 1.0));
    }
    for (i, j) in pairs {
        let d2 = squared_distance(cloud.point(i), cloud.point(j));
        let w = (-d2 / (graph.sigma[i] * graph.sigma[j])).exp();
        if !w.is_finite() {
            return Err(Error::numeric(format!("weight ({i}, {j}) is {w}")));
        }
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    csr_from_triplets(n, &triplets)
}

/// `L_ii = sum_{j != i} W_ij`, `L_ij = -W_ij`.
pub fn graph_laplacian(w: &SparseSym) -> SparseSym {
    let degree: Vec<f64> = (0..w.n())
        .map(|i| w.row(i).filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
        .collect();
    let mut l = w.map_values(|i, j, v| if i == j { degree[i] } else { -v });
    if (0..w.n()).any(|i| w.get(i, i).is_none()) {
        // rows without a stored diagonal need one for the degree
        let diag: Vec<(usize, usize, f64)> = (0..w.n())
            .filter(|&i| w.get(i, i).is_none())
            .map(|i| (i, i, degree[i]))
            .collect();
        let extra = csr_from_triplets(w.n(), &diag).expect("diagonal triplets are symmetric");
        l = l.linear_combination(1.0, &extra, 1.0).expect("same dimension");
    }
    l
}

/// `u^T L u`, the discrete Dirichlet energy of `u` over the graph.
pub fn dirichlet_energy(l: &SparseSym, u: &[f64]) -> Result<f64> {
    let lu = crate::sparse::spmv(l, u)?;
    Ok(u.iter().zip(&lu).map(|(a, b)| a * b).sum())
}

/// Neighbor graph together with its weight matrix and Laplacian.
#[derive(Debug, Clone)]
pub struct ManifoldGraph {
    pub neighbors: NeighborGraph,
    pub weights: SparseSym,
    pub laplacian: SparseSym,
}

impl ManifoldGraph {
    pub fn build(cloud: &PointCloud, k: usize, class_masked: bool, sigma_rank: usize) -> Result<Self> {
        let neighbors = build_neighbor_graph(cloud, k, class_masked, sigma_rank)?;
        let weights = build_weight_matrix(cloud, &neighbors)?;
        let laplacian = graph_laplacian(&weights);
        Ok(ManifoldGraph {
            neighbors,
            weights,
            laplacian,
        })
    }

    /// Sum of the Dirichlet energies of the feature columns of `cloud`.
    pub fn feature_energy(&self, cloud: &PointCloud) -> Result<f64> {
        let (n, d, d1) = (cloud.len(), cloud.dim(), cloud.input_dim());
        let mut total = 0.0;
        let mut column = vec![0.0; n];
        for j in d1..d {
            for (i, c) in column.iter_mut().enumerate() {
                *c = cloud.points()[i * d + j];
            }
            total += dirichlet_energy(&self.laplacian, &column)?;
        }
        Ok(total)
    }
}
