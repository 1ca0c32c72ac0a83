use super::{Network, Tensor};
use crate::error::{Error, Result};

/// Momentum SGD state. With `weight_decay = w` the step minimizes
/// `J + w |theta|^2` over weights (biases are not decayed).
#[derive(Debug, Clone)]
pub struct OptState {
    pub velocity: Vec<Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptState {
    pub fn new(net: &Network, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptState {
            velocity: net.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
            learning_rate,
            momentum,
            weight_decay,
        }
    }
}

/// `v <- momentum v - lr (g + 2 w theta)`, `theta <- theta + v`.
pub fn sgd_momentum_step(net: &mut Network, grads: &[Tensor], opt: &mut OptState) -> Result<()> {
    if grads.len() != net.params().len() || opt.velocity.len() != grads.len() {
        return Err(Error::structural(format!(
            "{} gradients and {} velocities for {} parameters",
            grads.len(),
            opt.velocity.len(),
            net.params().len()
        )));
    }
    let decay: Vec<f64> = (0..grads.len())
        .map(|i| if net.is_weight(i) { opt.weight_decay } else { 0.0 })
        .collect();
    let params = net.params_mut();
    for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(opt.velocity.iter_mut()).enumerate() {
        p.same_shape(g)?;
        p.same_shape(v)?;
        let w = decay[i];
        for ((pj, gj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vj = opt.momentum * *vj - opt.learning_rate * (gj + 2.0 * w * *pj);
            *pj += *vj;
        }
    }
    Ok(())
}
