//! A small dense/convolutional network engine in `f64`: forward, softmax
//! loss, backprop with an injectable feature-layer gradient, dropout and
//! momentum SGD with optional weight decay.

pub mod checkpoint;
mod gemm;
mod loss;
mod network;
mod optim;
mod spec;
mod tensor;

pub use loss::{augmented_gradient, softmax_loss, softmax_loss_batch};
pub use network::{dropout_apply, ForwardPass, Gradients, Mode, Network};
pub use optim::{sgd_momentum_step, OptState};
pub use spec::{LayerSpec, NetworkSpec};
pub use tensor::Tensor;
