use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum SGD: `v <- momentum * v + g`, `p <- p - lr * v`.
pub fn sgd_update(
    params: &mut Tensor,
    grads: &Tensor,
    lr: f32,
    momentum: f32,
    velocity: &mut Tensor,
) -> Result<()> {
    if params.shape() != grads.shape() || params.shape() != velocity.shape() {
        return Err(Error::shape(format!(
            "sgd shapes params {:?} grads {:?} velocity {:?}",
            params.shape(),
            grads.shape(),
            velocity.shape()
        )));
    }
    for ((p, g), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    params.check_finite("sgd_update")
}
