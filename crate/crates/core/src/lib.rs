//! Low-dimensional-manifold regularization for small neural networks.
//!
//! The training loop alternates between three pieces:
//!
//! * a class-aware kNN graph over the point cloud of concatenated
//!   `(input, feature)` pairs ([`graph`]),
//! * a point-integral linear solve that smooths each feature coordinate over
//!   that graph ([`pim`], backed by [`sparse`]),
//! * mini-batch SGD on the softmax loss plus an augmented-Lagrangian pull
//!   towards the smoothed coordinates ([`nn`], [`trainer`]).
//!
//! Weight-decay and dropout baselines share the same loop so comparisons are
//! like-for-like. [`data`] reads IDX image files and exports features.

pub mod data;
pub mod error;
pub mod graph;
pub mod nn;
pub mod pim;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};
