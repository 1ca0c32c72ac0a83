use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Tensor,
    /// Variance along each component (eigenvalues of the covariance).
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    /// `n x k` centered projections.
    pub projection: Tensor,
    /// Set when the data had fewer than `k` nonzero directions; the missing
    /// components are zero.
    pub rank_deficient: bool,
}

/// Projects the rows of `features` (`n x d`) onto their top `k` principal
/// components, computed from the `d x d` sample covariance.
///
/// Signs are fixed so the largest-magnitude entry of every component is
/// positive.
pub fn pca_project(features: &Tensor, k: usize) -> Result<Pca> {
    if features.shape().len() != 2 {
        return Err(Error::structural(format!(
            "PCA needs an n x d matrix, got {:?}",
            features.shape()
        )));
    }
    let (n, d) = (features.rows(), features.row_len());
    if n <= k {
        return Err(Error::structural(format!(
            "PCA to {k} dimensions needs more than {k} samples, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| features.row(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let floor = 1e-12 * total_variance.abs().max(f64::MIN_POSITIVE);

    let mut components = Tensor::zeros(&[k, d]);
    let mut explained_variance = vec![0.0; k];
    let mut rank_deficient = false;
    for (c, &idx) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > floor) || c >= d {
            rank_deficient = true;
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v.iter().enumerate().fold(
            (0, 0.0f64),
            |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best },
        );
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(c).copy_from_slice(&v);
        explained_variance[c] = lambda;
    }
    if k > d {
        rank_deficient = true;
    }
    if rank_deficient {
        log::warn!("PCA: data has rank below {k}; padding with zero components");
    }

    let mut projection = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for c in 0..k {
            projection.row_mut(i)[c] = centered.row(i).iter().zip(components.row(c)).map(|(a, b)| a * b).sum();
        }
    }
    Ok(Pca {
        mean,
        components,
        explained_variance,
        total_variance,
        projection,
        rank_deficient,
    })
}
