use std::collections::BTreeMap;

use super::params::{LayerParams, NetParams};
use super::spec::{LayerSpec, NetSpec};
use crate::error::{Error, Result};
use crate::ops::{
    conv2d, conv2d_backward, dense, dense_backward, maxpool2d_backward, maxpool2d_with_argmax,
    relu, relu_backward,
};
use crate::tensor::Tensor;

/// Activations recorded at one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedLayer {
    /// Raw convolution output.
    pub pre_activation: Tensor,
    /// Output after the stage's activation (the same tensor when no ReLU
    /// directly follows the conv).
    pub post_activation: Tensor,
}

pub type Captures = BTreeMap<usize, CapturedLayer>;

/// Applies a single parameterless or parameterized layer.
pub(crate) fn apply_layer(layer: &LayerSpec, params: &LayerParams, x: &Tensor) -> Result<Tensor> {
    match (layer, params) {
        (LayerSpec::Conv { stride, pad, .. }, LayerParams::Conv(k)) => conv2d(x, k, *stride, *pad),
        (LayerSpec::MaxPool { window, stride }, _) => {
            Ok(maxpool2d_with_argmax(x, *window, *stride)?.0)
        }
        (LayerSpec::Relu, _) => Ok(relu(x)),
        (LayerSpec::Flatten, _) => {
            let n = x.len();
            x.clone().reshape(vec![n])
        }
        (LayerSpec::Dense { .. }, LayerParams::Dense { weights, bias }) => dense(x, weights, bias),
        (layer, _) => Err(Error::shape(format!("missing parameters for {layer:?}"))),
    }
}

/// Applies a parameterless layer.
pub fn apply_plain_layer(layer: &LayerSpec, x: &Tensor) -> Result<Tensor> {
    apply_layer(layer, &LayerParams::None, x)
}

fn check_input(spec: &NetSpec, input: &Tensor) -> Result<()> {
    if input.shape() != spec.input_shape() {
        return Err(Error::shape(format!(
            "network expects input {:?}, got {:?}",
            spec.input_shape(),
            input.shape()
        )));
    }
    Ok(())
}

/// Runs the network, recording conv activations for the requested layers.
pub fn forward(
    spec: &NetSpec,
    params: &NetParams,
    input: &Tensor,
    capture: &[usize],
) -> Result<(Tensor, Captures)> {
    check_input(spec, input)?;
    for &l in capture {
        spec.conv_position(l)?;
    }
    let mut captures = Captures::new();
    let mut x = input.clone();
    let mut pending: Option<usize> = None;
    for (i, layer) in spec.layers().iter().enumerate() {
        let y = apply_layer(layer, params.layer(i), &x)?;
        if let Some(l) = pending.take() {
            let post = if matches!(layer, LayerSpec::Relu) {
                y.clone()
            } else {
                x.clone()
            };
            captures.insert(
                l,
                CapturedLayer {
                    pre_activation: x.clone(),
                    post_activation: post,
                },
            );
        }
        if let Some(l) = spec.conv_index_at(i) {
            if capture.contains(&l) {
                pending = Some(l);
            }
        }
        x = y;
    }
    if let Some(l) = pending {
        captures.insert(
            l,
            CapturedLayer {
                pre_activation: x.clone(),
                post_activation: x.clone(),
            },
        );
    }
    Ok((x, captures))
}

pub fn logits(spec: &NetSpec, params: &NetParams, input: &Tensor) -> Result<Tensor> {
    forward(spec, params, input, &[]).map(|(l, _)| l)
}

/// Per-layer inputs kept for backpropagation.
pub(crate) struct Trace {
    inputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
    pub output: Tensor,
}

pub(crate) fn forward_trace(spec: &NetSpec, params: &NetParams, input: &Tensor) -> Result<Trace> {
    check_input(spec, input)?;
    let mut inputs = Vec::with_capacity(spec.layers().len());
    let mut argmax = Vec::with_capacity(spec.layers().len());
    let mut x = input.clone();
    for (i, layer) in spec.layers().iter().enumerate() {
        let (y, arg) = match layer {
            LayerSpec::MaxPool { window, stride } => {
                let (y, a) = maxpool2d_with_argmax(&x, *window, *stride)?;
                (y, Some(a))
            }
            _ => (apply_layer(layer, params.layer(i), &x)?, None),
        };
        inputs.push(x);
        argmax.push(arg);
        x = y;
    }
    Ok(Trace {
        inputs,
        argmax,
        output: x,
    })
}

/// Gradients per layer position; `None` for parameterless or frozen layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<(Tensor, Tensor)>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetParams, first_trainable: usize) -> Self {
        let layers = params
            .layers()
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                _ if i < first_trainable => None,
                LayerParams::None => None,
                LayerParams::Conv(k) => Some((
                    Tensor::zeros(k.weights().shape()),
                    Tensor::zeros(k.bias().shape()),
                )),
                LayerParams::Dense { weights, bias } => {
                    Some((Tensor::zeros(weights.shape()), Tensor::zeros(bias.shape())))
                }
            })
            .collect();
        Gradients { layers }
    }

    pub(crate) fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a, b) {
                for (x, y) in aw.data_mut().iter_mut().zip(bw.data()) {
                    *x += y;
                }
                for (x, y) in ab.data_mut().iter_mut().zip(bb.data()) {
                    *x += y;
                }
            }
        }
    }

    pub(crate) fn scale(&mut self, s: f32) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.data_mut().iter_mut().for_each(|v| *v *= s);
            b.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Backpropagates `grad_logits` down to layer position `first_trainable`.
pub(crate) fn backward(
    spec: &NetSpec,
    params: &NetParams,
    trace: &Trace,
    grad_logits: &Tensor,
    first_trainable: usize,
) -> Result<Gradients> {
    let mut grads = Gradients {
        layers: vec![None; spec.layers().len()],
    };
    let mut g = grad_logits.clone();
    for i in (first_trainable..spec.layers().len()).rev() {
        let x = &trace.inputs[i];
        let need_input = i > first_trainable;
        match (&spec.layers()[i], params.layer(i)) {
            (LayerSpec::Conv { stride, pad, .. }, LayerParams::Conv(k)) => {
                let cg = conv2d_backward(x, k, *stride, *pad, &g, need_input)?;
                grads.layers[i] = Some((cg.weights, cg.bias));
                match cg.input {
                    Some(d) => g = d,
                    None => break,
                }
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense { weights, bias }) => {
                let dg = dense_backward(x, weights, bias, &g)?;
                grads.layers[i] = Some((dg.weights, dg.bias));
                g = dg.input;
            }
            (LayerSpec::MaxPool { .. }, _) => {
                g = maxpool2d_backward(x.shape(), trace.argmax[i].as_ref().unwrap(), &g)?;
            }
            (LayerSpec::Relu, _) => g = relu_backward(x, &g)?,
            (LayerSpec::Flatten, _) => g = g.reshape(x.shape().to_vec())?,
            (layer, _) => return Err(Error::shape(format!("missing parameters for {layer:?}"))),
        }
    }
    Ok(grads)
}

/// Loss and parameter gradients for one labeled example.
pub fn loss_and_gradients(
    spec: &NetSpec,
    params: &NetParams,
    input: &Tensor,
    label: usize,
    first_trainable: usize,
) -> Result<(f32, Gradients)> {
    let trace = forward_trace(spec, params, input)?;
    let (loss, dlogits) = crate::ops::softmax_xent(&trace.output, label)?;
    let grads = backward(spec, params, &trace, &dlogits, first_trainable)?;
    Ok((loss, grads))
}
