//! Exact k-nearest-neighbor search over a static point set.
//!
//! Nodes split at the median of the coordinate with the widest spread. Every
//! node keeps its bounding box, and a subtree is skipped only when the box is
//! strictly farther than the current k-th candidate, so results (including
//! the lower-index tie rule) are identical to an exhaustive scan.

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf,
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    labels: Option<Vec<usize>>,
    label_counts: Vec<usize>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    // per-node bounding boxes, `dim` values each
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Same sum as [`squared_distance`], abandoned once it exceeds `bound`.
#[inline]
fn squared_distance_bounded(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (chunk_a, chunk_b) in a.chunks(16).zip(b.chunks(16)) {
        for (x, y) in chunk_a.iter().zip(chunk_b) {
            let d = x - y;
            acc += d * d;
        }
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

/// The k best `(squared distance, index)` pairs seen so far, kept sorted.
struct Candidates {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Candidates {
    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn offer(&mut self, d2: f64, idx: usize) {
        let key = (d2, idx);
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if (key.0, key.1) >= (last.0, last.1) {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| d < key.0 || (d == key.0 && i < key.1));
        self.items.insert(pos, key);
    }
}

impl KdTree {
    /// Builds a tree over `points`, a row-major `n x dim` matrix.
    pub fn build(points: &[f64], dim: usize) -> Result<Self> {
        Self::build_inner(points, dim, None)
    }

    /// Builds a tree whose queries can be restricted to one class.
    pub fn build_with_labels(points: &[f64], dim: usize, labels: &[usize]) -> Result<Self> {
        Self::build_inner(points, dim, Some(labels.to_vec()))
    }

    fn build_inner(points: &[f64], dim: usize, labels: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::structural("k-d tree needs at least one dimension"));
        }
        if points.is_empty() {
            return Err(Error::structural("k-d tree needs at least one point"));
        }
        if points.len() % dim != 0 {
            return Err(Error::structural(format!(
                "{} coordinates do not form rows of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::structural(format!("{} labels for {n} points", l.len())));
            }
        }
        let label_counts = match &labels {
            Some(l) => {
                let mut counts = vec![0usize; l.iter().max().map_or(0, |m| m + 1)];
                for &c in l {
                    counts[c] += 1;
                }
                counts
            }
            None => Vec::new(),
        };
        let mut tree = KdTree {
            dim,
            points: points.to_vec(),
            labels,
            label_counts,
            order: (0..n).collect(),
            nodes: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        };
        tree.build_node(0, n);
        Ok(tree)
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for &i in &self.order[start..end] {
            let p = &self.points[i * self.dim..(i + 1) * self.dim];
            for c in 0..self.dim {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let (split_dim, spread) =
            (0..self.dim)
                .map(|c| (c, hi[c] - lo[c]))
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        self.lo.extend_from_slice(&lo);
        self.hi.extend_from_slice(&hi);
        self.nodes.push(Node {
            start,
            end,
            kind: NodeKind::Leaf,
        });
        if end - start <= LEAF_SIZE || !(spread > 0.0) {
            return id;
        }

        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + split_dim]
                .total_cmp(&points[b * dim + split_dim])
                .then(a.cmp(&b))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].kind = NodeKind::Split { left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Depth of the deepest leaf; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id].kind {
                NodeKind::Leaf => 0,
                NodeKind::Split { left, right } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Number of points a query from `query_index` may return.
    pub fn eligible_count(&self, query_index: usize, class_mask: Option<usize>) -> Result<usize> {
        let all = match class_mask {
            None => self.len(),
            Some(c) => {
                if self.labels.is_none() {
                    return Err(Error::structural("class-masked query on a tree built without labels"));
                }
                self.label_counts.get(c).copied().unwrap_or(0)
            }
        };
        let self_eligible = match class_mask {
            None => true,
            Some(c) => self.label(query_index) == Some(c),
        };
        Ok(all - usize::from(self_eligible))
    }

    fn box_distance(&self, node: usize, q: &[f64]) -> f64 {
        let lo = &self.lo[node * self.dim..(node + 1) * self.dim];
        let hi = &self.hi[node * self.dim..(node + 1) * self.dim];
        let mut acc = 0.0;
        for c in 0..self.dim {
            let d = if q[c] < lo[c] {
                lo[c] - q[c]
            } else if q[c] > hi[c] {
                q[c] - hi[c]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }

    /// The `k` nearest points to point `query_index`, excluding itself,
    /// sorted by `(distance, index)`. With `class_mask`, only points of that
    /// class are eligible.
    ///
    /// Returns point ids and Euclidean distances.
    pub fn knn_query(&self, query_index: usize, k: usize, class_mask: Option<usize>) -> Result<(Vec<usize>, Vec<f64>)> {
        if query_index >= self.len() {
            return Err(Error::structural(format!(
                "query index {query_index} out of range for {} points",
                self.len()
            )));
        }
        let available = self.eligible_count(query_index, class_mask)?;
        if k > available {
            return Err(Error::DegenerateSize {
                requested: k,
                available,
            });
        }
        if k == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let q = self.point(query_index).to_vec();
        let mut cand = Candidates {
            k,
            items: Vec::with_capacity(k + 1),
        };
        let eligible = |i: usize| {
            i != query_index
                && match (class_mask, &self.labels) {
                    (Some(c), Some(l)) => l[i] == c,
                    _ => true,
                }
        };
        self.search(0, &q, &eligible, &mut cand);
        let ids = cand.items.iter().map(|&(_, i)| i).collect();
        let dists = cand.items.iter().map(|&(d, _)| d.sqrt()).collect();
        Ok((ids, dists))
    }

    fn search(&self, node: usize, q: &[f64], eligible: &dyn Fn(usize) -> bool, cand: &mut Candidates) {
        let n = &self.nodes[node];
        match n.kind {
            NodeKind::Leaf => {
                for &i in &self.order[n.start..n.end] {
                    if !eligible(i) {
                        continue;
                    }
                    let worst = cand.worst();
                    if let Some(d2) = squared_distance_bounded(q, self.point(i), worst) {
                        cand.offer(d2, i);
                    }
                }
            }
            NodeKind::Split { left, right } => {
                let dl = self.box_distance(left, q);
                let dr = self.box_distance(right, q);
                let (first, d_first, second, d_second) = if dl <= dr {
                    (left, dl, right, dr)
                } else {
                    (right, dr, left, dl)
                };
                // equal distance may still hold a lower-index tie, so prune strictly
                if d_first <= cand.worst() {
                    self.search(first, q, eligible, cand);
                }
                if d_second <= cand.worst() {
                    self.search(second, q, eligible, cand);
                }
            }
        }
    }
}
