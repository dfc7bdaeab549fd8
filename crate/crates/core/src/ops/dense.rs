use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let [o, d] = weights.shape()[..] else {
        return Err(Error::shape(format!(
            "dense weights must be 2-d, got {:?}",
            weights.shape()
        )));
    };
    if input.len() != d || bias.shape() != [o] {
        return Err(Error::shape(format!(
            "dense {o}x{d} with input of {} and bias {:?}",
            input.len(),
            bias.shape()
        )));
    }
    Ok((o, d))
}

/// `out[o] = bias[o] + sum_d weights[o, d] * input[d]`, accumulated in `f64`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (o, d) = check(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let out: Vec<f32> = (0..o)
        .map(|r| {
            let mut s = bias.data()[r] as f64;
            for (wi, xi) in w[r * d..(r + 1) * d].iter().zip(x) {
                s += *wi as f64 * *xi as f64;
            }
            s as f32
        })
        .collect();
    let out = Tensor::new(vec![o], out)?;
    out.check_finite("dense")?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<DenseGrads> {
    let (o, d) = check(input, weights, bias)?;
    if grad_out.len() != o {
        return Err(Error::shape("dense gradient length"));
    }
    let x = input.data();
    let g = grad_out.data();
    let w = weights.data();
    let mut dw = vec![0.0f32; o * d];
    for r in 0..o {
        for (slot, xi) in dw[r * d..(r + 1) * d].iter_mut().zip(x) {
            *slot = g[r] * xi;
        }
    }
    let mut dx = vec![0.0f64; d];
    for r in 0..o {
        let gr = g[r] as f64;
        for (acc, wi) in dx.iter_mut().zip(&w[r * d..(r + 1) * d]) {
            *acc += gr * *wi as f64;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(
            input.shape().to_vec(),
            dx.into_iter().map(|v| v as f32).collect(),
        )?,
        weights: Tensor::new(vec![o, d], dw)?,
        bias: grad_out.clone().reshape(vec![o])?,
    })
}
