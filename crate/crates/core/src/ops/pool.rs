use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn pool_dims(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    if stride == 0 || window == 0 {
        return Err(Error::InvalidArgument(
            "pool window and stride must be positive".into(),
        ));
    }
    if window > h || window > w {
        return Err(Error::shape(format!(
            "pool window {window} larger than {h}x{w}"
        )));
    }
    Ok((
        c,
        h,
        w,
        (h - window) / stride + 1,
        (w - window) / stride + 1,
    ))
}

/// Max pooling without padding. Also returns, per output cell, the flat
/// input index that won (first maximum in scan order).
pub fn maxpool2d_with_argmax(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w, oh, ow) = pool_dims(input, window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0;
                for i in 0..window {
                    for j in 0..window {
                        let idx = (ch * h + oy * stride + i) * w + ox * stride + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_argmax(input, window, stride).map(|(t, _)| t)
}

pub fn maxpool2d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("pool gradient does not match recorded argmax"));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_by_two_picks_max() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&t, 2, 2).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::full(&[2, 4, 4], 0.25);
        let out = maxpool2d(&t, 2, 2).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn random_matches_window_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::from_fn(&[3, 6, 6], |_| rng.random_range(-1.0..1.0));
        let out = maxpool2d(&t, 2, 2).unwrap();
        for c in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut m = f32::MIN;
                    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        m = m.max(t.data()[(c * 6 + 2 * oy + i) * 6 + 2 * ox + j]);
                    }
                    assert_eq!(out.data()[(c * 3 + oy) * 3 + ox], m);
                }
            }
        }
    }

    #[test]
    fn window_too_large_is_error() {
        assert!(maxpool2d(&Tensor::zeros(&[1, 2, 2]), 3, 1).is_err());
    }

    #[test]
    fn backward_routes_to_winner() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 5.0, 3.0, 4.0]).unwrap();
        let (_, arg) = maxpool2d_with_argmax(&t, 2, 2).unwrap();
        let dx = maxpool2d_backward(t.shape(), &arg, &Tensor::full(&[1, 1, 1], 2.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
