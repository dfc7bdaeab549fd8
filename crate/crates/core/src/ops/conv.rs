use serde::{Deserialize, Serialize};

use super::gemm::{dot_f64, gemm_f32, gemm_f64};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A bank of (possibly grouped) convolution filters with biases.
///
/// Weights are `[out_channels, in_channels_per_group, kh, kw]`; output
/// channel `j` belongs to group `j / (out_channels / groups)` and reads only
/// that group's slice of input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernels {
    out_channels: usize,
    in_channels_per_group: usize,
    kh: usize,
    kw: usize,
    groups: usize,
    weights: Tensor,
    bias: Tensor,
}

impl ConvKernels {
    pub fn new(weights: Tensor, bias: Tensor, groups: usize) -> Result<Self> {
        let [out_channels, in_channels_per_group, kh, kw] = weights.shape()[..] else {
            return Err(Error::shape(format!(
                "conv weights must be 4-d, got {:?}",
                weights.shape()
            )));
        };
        if groups == 0 || out_channels % groups != 0 {
            return Err(Error::shape(format!(
                "{out_channels} filters not divisible into {groups} groups"
            )));
        }
        if bias.shape() != [out_channels] {
            return Err(Error::shape(format!(
                "bias shape {:?} for {out_channels} filters",
                bias.shape()
            )));
        }
        Ok(ConvKernels {
            out_channels,
            in_channels_per_group,
            kh,
            kw,
            groups,
            weights,
            bias,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels_per_group: usize,
        kh: usize,
        kw: usize,
        groups: usize,
    ) -> Result<Self> {
        ConvKernels::new(
            Tensor::zeros(&[out_channels, in_channels_per_group, kh, kw]),
            Tensor::zeros(&[out_channels]),
            groups,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels_per_group(&self) -> usize {
        self.in_channels_per_group
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels_per_group * self.groups
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn group_of(&self, filter: usize) -> usize {
        filter / self.out_per_group()
    }

    /// Length of one filter's weight vector.
    pub fn filter_len(&self) -> usize {
        self.in_channels_per_group * self.kh * self.kw
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        self.bias.data_mut()
    }

    pub fn filter(&self, j: usize) -> &[f32] {
        let n = self.filter_len();
        &self.weights.data()[j * n..(j + 1) * n]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Unfolded input patches: row `(c, i, j)`, column `(oy, ox)`.
pub(crate) struct Columns {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

pub(crate) fn im2col(
    input: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    win: Window,
    oh: usize,
    ow: usize,
) -> Columns {
    let rows = channels * win.kh * win.kw;
    let cols = oh * ow;
    let mut data = vec![0.0f64; rows * cols];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for i in 0..win.kh {
            for j in 0..win.kw {
                let r = (c * win.kh + i) * win.kw + j;
                let row = &mut data[r * cols..(r + 1) * cols];
                for oy in 0..oh {
                    let y = (oy * win.stride + i) as isize - win.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    for ox in 0..ow {
                        let x = (ox * win.stride + j) as isize - win.pad as isize;
                        if x >= 0 && x < w as isize {
                            row[oy * ow + ox] = src[x as usize] as f64;
                        }
                    }
                }
            }
        }
    }
    Columns { data, rows, cols }
}

fn col2im(
    cols: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    win: Window,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let mut acc = vec![0.0f64; channels * h * w];
    let ncols = oh * ow;
    for c in 0..channels {
        for i in 0..win.kh {
            for j in 0..win.kw {
                let r = (c * win.kh + i) * win.kw + j;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for oy in 0..oh {
                    let y = (oy * win.stride + i) as isize - win.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let x = (ox * win.stride + j) as isize - win.pad as isize;
                        if x >= 0 && x < w as isize {
                            acc[(c * h + y as usize) * w + x as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Convolves `in_len` contiguous channels of `input` with `filters` dense
/// (ungrouped) filters, writing `filters * oh * ow` values into `out`.
///
/// Grouped convolution and every pruned or fused layer go through this one
/// routine, so equal weights over equal channels give bit-equal outputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_block(
    input: &[f32],
    in_len: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    bias: &[f32],
    win: Window,
    oh: usize,
    ow: usize,
    out: &mut [f32],
) {
    let cols = im2col(input, in_len, h, w, win, oh, ow);
    conv_block_cols(&cols, weights, bias, out);
}

pub(crate) fn conv_block_cols(cols: &Columns, weights: &[f32], bias: &[f32], out: &mut [f32]) {
    gemm_f32(
        weights,
        bias.len(),
        cols.rows,
        &cols.data,
        cols.cols,
        |m| bias[m] as f64,
        out,
    );
}

fn check_input(
    input: &Tensor,
    kernels: &ConvKernels,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    if c != kernels.in_channels() {
        return Err(Error::shape(format!(
            "conv expects {} input channels ({} groups x {}), got {c}",
            kernels.in_channels(),
            kernels.groups,
            kernels.in_channels_per_group
        )));
    }
    let oh = conv_out_dim(h, kernels.kh, stride, pad)?;
    let ow = conv_out_dim(w, kernels.kw, stride, pad)?;
    Ok((c, h, w, oh, ow))
}

/// 2-d convolution with zero padding.
pub fn conv2d(input: &Tensor, kernels: &ConvKernels, stride: usize, pad: usize) -> Result<Tensor> {
    let (_, h, w, oh, ow) = check_input(input, kernels, stride, pad)?;
    let win = Window {
        kh: kernels.kh,
        kw: kernels.kw,
        stride,
        pad,
    };
    let plane = h * w;
    let opg = kernels.out_per_group();
    let ipg = kernels.in_channels_per_group;
    let flen = kernels.filter_len();
    let mut out = vec![0.0f32; kernels.out_channels * oh * ow];
    for g in 0..kernels.groups {
        conv_block(
            &input.data()[g * ipg * plane..(g + 1) * ipg * plane],
            ipg,
            h,
            w,
            &kernels.weights.data()[g * opg * flen..(g + 1) * opg * flen],
            &kernels.bias.data()[g * opg..(g + 1) * opg],
            win,
            oh,
            ow,
            &mut out[g * opg * oh * ow..(g + 1) * opg * oh * ow],
        );
    }
    let out = Tensor::new(vec![kernels.out_channels, oh, ow], out)?;
    out.check_finite("conv2d")?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &ConvKernels,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (c, h, w, oh, ow) = check_input(input, kernels, stride, pad)?;
    if grad_out.shape() != [kernels.out_channels, oh, ow] {
        return Err(Error::shape(format!(
            "conv grad shape {:?}",
            grad_out.shape()
        )));
    }
    let win = Window {
        kh: kernels.kh,
        kw: kernels.kw,
        stride,
        pad,
    };
    let plane = h * w;
    let p = oh * ow;
    let opg = kernels.out_per_group();
    let ipg = kernels.in_channels_per_group;
    let flen = kernels.filter_len();
    let mut dw = vec![0.0f32; kernels.weights.len()];
    let mut db = vec![0.0f32; kernels.out_channels];
    let mut dx = if need_input {
        vec![0.0f32; c * plane]
    } else {
        Vec::new()
    };
    let dout64: Vec<f64> = grad_out.data().iter().map(|&v| v as f64).collect();
    for g in 0..kernels.groups {
        let cols = im2col(
            &input.data()[g * ipg * plane..(g + 1) * ipg * plane],
            ipg,
            h,
            w,
            win,
            oh,
            ow,
        );
        let dg = &dout64[g * opg * p..(g + 1) * opg * p];
        for m in 0..opg {
            let drow = &dg[m * p..(m + 1) * p];
            db[g * opg + m] = drow.iter().sum::<f64>() as f32;
            let wrow = &mut dw[(g * opg + m) * flen..(g * opg + m + 1) * flen];
            for (r, slot) in wrow.iter_mut().enumerate() {
                *slot = dot_f64(drow, &cols.data[r * p..(r + 1) * p]) as f32;
            }
        }
        if need_input {
            // dcols[r][p] = sum_m W[m][r] * dout[m][p]
            let wg = &kernels.weights.data()[g * opg * flen..(g + 1) * opg * flen];
            let mut wt = vec![0.0f32; flen * opg];
            for m in 0..opg {
                for r in 0..flen {
                    wt[r * opg + m] = wg[m * flen + r];
                }
            }
            let mut dcols = vec![0.0f64; flen * p];
            gemm_f64(&wt, flen, opg, dg, p, |_| 0.0, &mut dcols);
            let part = col2im(&dcols, ipg, h, w, win, oh, ow);
            dx[g * ipg * plane..(g + 1) * ipg * plane].copy_from_slice(&part);
        }
    }
    Ok(ConvGrads {
        input: if need_input {
            Some(Tensor::new(vec![c, h, w], dx)?)
        } else {
            None
        },
        weights: Tensor::new(kernels.weights.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![kernels.out_channels], db)?,
    })
}
