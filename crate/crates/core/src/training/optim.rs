use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Heavy-ball SGD: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::Dimension(format!(
            "sgd lengths param={} grad={} velocity={}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    velocity: Vec<Vec<f64>>,
}

impl MomentumState {
    pub fn zeros(params: &ModelParams) -> Self {
        Self { velocity: params.ordered().iter().map(|t| vec![0.0; t.numel()]).collect() }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// One SGD-with-momentum step over every parameter tensor, `grads` in
/// canonical order.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut MomentumState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    let tensors = params.ordered_mut();
    if tensors.len() != grads.len() || tensors.len() != state.velocity.len() {
        return Err(Error::Dimension(format!(
            "{} tensors, {} gradients, {} momentum buffers",
            tensors.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((t, g), v) in tensors.into_iter().zip(grads).zip(&mut state.velocity) {
        sgd_update(t.data_mut(), g, v, lr, momentum)?;
    }
    Ok(())
}
