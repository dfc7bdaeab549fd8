use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Zeroes gradient entries whose forward input was not positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu gradient shape"));
    }
    let mut g = grad_out.clone();
    for (gi, xi) in g.data_mut().iter_mut().zip(input.data()) {
        if *xi <= 0.0 {
            *gi = 0.0;
        }
    }
    Ok(g)
}

pub fn softmax(logits: &Tensor) -> Vec<f64> {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits
        .data()
        .iter()
        .map(|&z| (z as f64 - max).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::OutOfBounds(format!("label {label} for {k} classes")));
    }
    logits.check_finite("softmax_xent")?;
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let shifted: Vec<f64> = logits.data().iter().map(|&z| z as f64 - max).collect();
    let log_total = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let loss = log_total - shifted[label];
    let grad: Vec<f32> = shifted
        .iter()
        .enumerate()
        .map(|(i, s)| ((s - log_total).exp() - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    Ok((loss as f32, Tensor::new(vec![k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = softmax_xent(&Tensor::full(&[10], 0.3), 4).unwrap();
        assert!((loss - 10f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let (loss, g) = softmax_xent(&logits, 0).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_xent(&Tensor::zeros(&[3]), 3).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..5 {
            let logits = Tensor::from_fn(&[6], |_| rng.random_range(-3.0..3.0));
            let label = trial % 6;
            let (_, g) = softmax_xent(&logits, label).unwrap();
            let eps = 1e-3f32;
            for i in 0..6 {
                let mut p = logits.clone();
                p.data_mut()[i] += eps;
                let mut m = logits.clone();
                m.data_mut()[i] -= eps;
                let fd = (softmax_xent(&p, label).unwrap().0 as f64
                    - softmax_xent(&m, label).unwrap().0 as f64)
                    / (2.0 * eps as f64);
                let an = g.data()[i] as f64;
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
                assert!(rel <= 1e-2 || (fd - an).abs() < 1e-4, "{i}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn relu_clamps() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }
}
