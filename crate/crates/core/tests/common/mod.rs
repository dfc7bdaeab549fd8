//! Random network generators shared by the integration tests.
#![allow(dead_code)]

use bft_core::model::{LayerSpec, NetSpec};
use bft_core::Tensor;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A small valid conv net with up to `max_convs` conv layers, groups in
/// {1, 2}, random kernels/strides/padding and optional ReLU and pooling,
/// ending in a dense classifier.
pub fn random_spec(rng: &mut ChaCha8Rng, max_convs: usize) -> NetSpec {
    loop {
        let c0 = *[1usize, 2, 4].choose(rng).unwrap();
        let size = rng.random_range(9..=14);
        let convs = rng.random_range(1..=max_convs);
        let mut layers = Vec::new();
        let (mut c, mut s) = (c0, size);
        let mut ok = true;
        for _ in 0..convs {
            let groups = if c % 2 == 0 && rng.random_bool(0.5) {
                2
            } else {
                1
            };
            let out = 2 * rng.random_range(1..=3);
            let k = *[1usize, 3, 5]
                .iter()
                .filter(|&&k| k <= s)
                .collect::<Vec<_>>()
                .choose(rng)
                .unwrap();
            let stride = if s >= 8 && rng.random_bool(0.3) { 2 } else { 1 };
            let pad = rng.random_range(0..=k / 2);
            layers.push(LayerSpec::grouped_conv(out, *k, stride, pad, groups));
            s = (s + 2 * pad - k) / stride + 1;
            c = out;
            if rng.random_bool(0.7) {
                layers.push(LayerSpec::Relu);
            }
            if s >= 4 && rng.random_bool(0.3) {
                layers.push(LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                });
                s = (s - 2) / 2 + 1;
            }
            if s == 0 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { out_features: 3 });
        if let Ok(spec) = NetSpec::new(vec![c0, size, size], layers) {
            return spec;
        }
    }
}

pub fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Per-layer `(weights, bias)` in `f64`, for the scalar reference below.
pub type RefParams = Vec<Option<(Vec<f64>, Vec<f64>)>>;

pub fn ref_params(params: &bft_core::model::NetParams) -> RefParams {
    use bft_core::model::LayerParams;
    let wide = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    params
        .layers()
        .iter()
        .map(|l| match l {
            LayerParams::None => None,
            LayerParams::Conv(k) => Some((wide(k.weights()), wide(k.bias()))),
            LayerParams::Dense { weights, bias } => Some((wide(weights), wide(bias))),
        })
        .collect()
}

/// Straight-loop `f64` forward pass. Also returns the activation pattern
/// (ReLU signs and max-pool winners) so callers can tell when a
/// perturbation crosses a non-differentiable point.
pub fn ref_forward(spec: &NetSpec, params: &RefParams, input: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let (mut c, mut h, mut w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let mut pattern = Vec::new();
    for (layer, p) in spec.layers().iter().zip(params) {
        match *layer {
            LayerSpec::Conv {
                out_channels: o,
                kh,
                kw,
                stride,
                pad,
                groups,
            } => {
                let (wt, b) = p.as_ref().unwrap();
                let (cpg, opg) = (c / groups, o / groups);
                let oh = (h + 2 * pad - kh) / stride + 1;
                let ow = (w + 2 * pad - kw) / stride + 1;
                let mut y = vec![0.0; o * oh * ow];
                for oc in 0..o {
                    let g = oc / opg;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = b[oc];
                            for ci in 0..cpg {
                                for i in 0..kh {
                                    for j in 0..kw {
                                        let (iy, ix) = (
                                            (oy * stride + i) as isize - pad as isize,
                                            (ox * stride + j) as isize - pad as isize,
                                        );
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        let xin =
                                            x[((g * cpg + ci) * h + iy as usize) * w + ix as usize];
                                        s += wt[((oc * cpg + ci) * kh + i) * kw + j] * xin;
                                    }
                                }
                            }
                            y[(oc * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                (c, h, w, x) = (o, oh, ow, y);
            }
            LayerSpec::Relu => {
                for v in &mut x {
                    pattern.push(usize::from(*v > 0.0));
                    *v = v.max(0.0);
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
                let mut y = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (mut best, mut at) = (f64::NEG_INFINITY, 0);
                            for i in 0..window {
                                for j in 0..window {
                                    let idx = (ch * h + oy * stride + i) * w + ox * stride + j;
                                    if x[idx] > best {
                                        (best, at) = (x[idx], idx);
                                    }
                                }
                            }
                            pattern.push(at);
                            y.push(best);
                        }
                    }
                }
                (h, w, x) = (oh, ow, y);
            }
            LayerSpec::Flatten => {
                (c, h, w) = (x.len(), 1, 1);
            }
            LayerSpec::Dense { out_features } => {
                let (wt, b) = p.as_ref().unwrap();
                let d = x.len();
                x = (0..out_features)
                    .map(|r| b[r] + (0..d).map(|k| wt[r * d + k] * x[k]).sum::<f64>())
                    .collect();
                (c, h, w) = (out_features, 1, 1);
            }
        }
    }
    let _ = (c, h, w);
    (x, pattern)
}

/// Softmax cross-entropy of `logits` against `label`, in `f64`.
pub fn xent64(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - logits[label]
}
