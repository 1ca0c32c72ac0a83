//! Point clouds, exact kNN search and the locally scaled graph built on top.

pub mod kdtree;
mod manifold;

pub use kdtree::KdTree;
pub use manifold::{
    build_neighbor_graph, build_weight_matrix, dirichlet_energy, graph_laplacian, local_scale, ManifoldGraph,
    NeighborGraph, PointCloud,
};
