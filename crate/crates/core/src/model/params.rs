use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetSpec};
use crate::error::{Error, Result};
use crate::ops::ConvKernels;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    None,
    Conv(ConvKernels),
    Dense { weights: Tensor, bias: Tensor },
}

impl LayerParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv(k) => vec![k.weights(), k.bias()],
            LayerParams::Dense { weights, bias } => vec![weights, bias],
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Learned weights, one entry per layer of the owning [`NetSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub(crate) layers: Vec<LayerParams>,
    pub(crate) seed: u64,
}

/// Expected parameter tensor shapes for a layer, as `(weights, bias)`.
pub(crate) fn expected_shapes(spec: &NetSpec, position: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let input = spec.shape_before(position);
    match spec.layers()[position] {
        LayerSpec::Conv {
            out_channels,
            kh,
            kw,
            groups,
            ..
        } => Some((
            vec![out_channels, input[0] / groups, kh, kw],
            vec![out_channels],
        )),
        LayerSpec::Dense { out_features } => {
            Some((vec![out_features, input[0]], vec![out_features]))
        }
        _ => None,
    }
}

impl NetParams {
    pub fn from_layers(spec: &NetSpec, layers: Vec<LayerParams>, seed: u64) -> Result<Self> {
        let params = NetParams { layers, seed };
        params.check(spec)?;
        Ok(params)
    }

    pub fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.layers.len() != spec.layers().len() {
            return Err(Error::shape(format!(
                "{} parameter entries for {} layers",
                self.layers.len(),
                spec.layers().len()
            )));
        }
        for (i, p) in self.layers.iter().enumerate() {
            let ok = match (expected_shapes(spec, i), p) {
                (None, LayerParams::None) => true,
                (Some((w, b)), LayerParams::Conv(k)) => {
                    let groups = match spec.layers()[i] {
                        LayerSpec::Conv { groups, .. } => groups,
                        _ => 0,
                    };
                    k.weights().shape() == w.as_slice()
                        && k.bias().shape() == b.as_slice()
                        && k.groups() == groups
                }
                (Some((w, b)), LayerParams::Dense { weights, bias }) => {
                    matches!(spec.layers()[i], LayerSpec::Dense { .. })
                        && weights.shape() == w.as_slice()
                        && bias.shape() == b.as_slice()
                }
                _ => false,
            };
            if !ok {
                return Err(Error::shape(format!(
                    "parameters of layer {i} do not match {:?}",
                    spec.layers()[i]
                )));
            }
        }
        Ok(())
    }

    /// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..spec.layers().len())
            .map(|i| match expected_shapes(spec, i) {
                None => LayerParams::None,
                Some((wshape, bshape)) => {
                    let fan_in: usize = wshape[1..].iter().product();
                    let normal =
                        Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
                    let weights = Tensor::from_fn(&wshape, |_| normal.sample(&mut rng));
                    let bias = Tensor::zeros(&bshape);
                    match spec.layers()[i] {
                        LayerSpec::Conv { groups, .. } => LayerParams::Conv(
                            ConvKernels::new(weights, bias, groups).expect("shapes from spec"),
                        ),
                        _ => LayerParams::Dense { weights, bias },
                    }
                }
            })
            .collect();
        NetParams { layers, seed }
    }

    /// Parameters with every tensor zero.
    pub fn zeros(spec: &NetSpec) -> Self {
        let mut p = NetParams::init(spec, 0);
        for layer in &mut p.layers {
            match layer {
                LayerParams::Conv(k) => {
                    k.weights_mut().fill(0.0);
                }
                LayerParams::Dense { weights, .. } => weights.data_mut().fill(0.0),
                LayerParams::None => {}
            }
        }
        p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, position: usize) -> &LayerParams {
        &self.layers[position]
    }

    pub fn layer_mut(&mut self, position: usize) -> &mut LayerParams {
        &mut self.layers[position]
    }

    pub fn conv(&self, spec: &NetSpec, l: usize) -> Result<&ConvKernels> {
        match &self.layers[spec.conv_position(l)?] {
            LayerParams::Conv(k) => Ok(k),
            _ => Err(Error::shape(format!("layer for conv {l} holds no kernels"))),
        }
    }

    pub fn conv_mut(&mut self, spec: &NetSpec, l: usize) -> Result<&mut ConvKernels> {
        match &mut self.layers[spec.conv_position(l)?] {
            LayerParams::Conv(k) => Ok(k),
            _ => Err(Error::shape(format!("layer for conv {l} holds no kernels"))),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    /// Bitwise equality of every tensor.
    pub fn bit_eq(&self, other: &NetParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                let (ta, tb) = (a.tensors(), b.tensors());
                ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| x.bit_eq(y))
            })
    }
}

pub fn init_net(spec: &NetSpec, seed: u64) -> NetParams {
    NetParams::init(spec, seed)
}
