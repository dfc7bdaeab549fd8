use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::conv_out_dim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, k: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kh: k,
            kw: k,
            stride,
            pad,
            groups: 1,
        }
    }

    pub fn grouped_conv(
        out_channels: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Self {
        LayerSpec::Conv {
            out_channels,
            kh: k,
            kw: k,
            stride,
            pad,
            groups,
        }
    }

    /// Pooling and activation keep channels separate.
    pub fn is_channel_preserving(&self) -> bool {
        matches!(self, LayerSpec::MaxPool { .. } | LayerSpec::Relu)
    }

    /// Propagates an activation shape through this layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match (*self, input) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kh,
                    kw,
                    stride,
                    pad,
                    groups,
                },
                &[c, h, w],
            ) => {
                if groups == 0 || c % groups != 0 || out_channels % groups != 0 {
                    return Err(Error::shape(format!(
                        "conv with {groups} groups over {c} channels into {out_channels} filters"
                    )));
                }
                if out_channels == 0 {
                    return Err(Error::shape("conv with zero filters"));
                }
                Ok(vec![
                    out_channels,
                    conv_out_dim(h, kh, stride, pad)?,
                    conv_out_dim(w, kw, stride, pad)?,
                ])
            }
            (LayerSpec::MaxPool { window, stride }, &[c, h, w]) => {
                if window == 0 || stride == 0 {
                    return Err(Error::InvalidArgument(
                        "pool window and stride must be positive".into(),
                    ));
                }
                if window > h || window > w {
                    return Err(Error::shape(format!("pool window {window} over {h}x{w}")));
                }
                Ok(vec![
                    c,
                    (h - window) / stride + 1,
                    (w - window) / stride + 1,
                ])
            }
            (LayerSpec::Relu, s) => Ok(s.to_vec()),
            (LayerSpec::Flatten, &[c, h, w]) => Ok(vec![c * h * w]),
            (LayerSpec::Dense { out_features }, &[_]) if out_features > 0 => Ok(vec![out_features]),
            (layer, s) => Err(Error::shape(format!(
                "{layer:?} cannot consume shape {s:?}"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawNetSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

/// An ordered, shape-checked layer list. Conv layers are numbered `1..=L`
/// in order of appearance; everything else is addressed by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetSpec", into = "RawNetSpec")]
pub struct NetSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    conv_positions: Vec<usize>,
}

impl TryFrom<RawNetSpec> for NetSpec {
    type Error = Error;
    fn try_from(raw: RawNetSpec) -> Result<Self> {
        NetSpec::new(raw.input_shape, raw.layers)
    }
}

impl From<NetSpec> for RawNetSpec {
    fn from(s: NetSpec) -> Self {
        RawNetSpec {
            input_shape: s.input_shape,
            layers: s.layers,
        }
    }
}

impl NetSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.len() != 3 || input_shape.contains(&0) {
            return Err(Error::shape(format!(
                "input shape must be [C,H,W], got {input_shape:?}"
            )));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape.clone());
        let mut conv_positions = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            if matches!(layer, LayerSpec::Conv { .. }) {
                conv_positions.push(i);
            }
            shapes.push(next);
        }
        Ok(NetSpec {
            input_shape,
            layers,
            shapes,
            conv_positions,
        })
    }

    /// The reference desk-scale network: five conv stages, two dense layers.
    pub fn snet(num_classes: usize) -> Self {
        use LayerSpec::*;
        NetSpec::new(
            vec![1, 28, 28],
            vec![
                LayerSpec::conv(8, 5, 1, 2),
                Relu,
                MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::conv(16, 5, 1, 2),
                Relu,
                MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                MaxPool {
                    window: 2,
                    stride: 2,
                },
                Flatten,
                Dense { out_features: 64 },
                Relu,
                Dense {
                    out_features: num_classes,
                },
            ],
        )
        .expect("S-Net layout is valid")
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input shape of layer at position `i` (`i == layers.len()` gives the output).
    pub fn shape_before(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Number of conv layers, `L`.
    pub fn conv_count(&self) -> usize {
        self.conv_positions.len()
    }

    /// Filter counts `N^1..N^L`.
    pub fn conv_filter_counts(&self) -> Vec<usize> {
        self.conv_positions
            .iter()
            .map(|&p| self.shapes[p + 1][0])
            .collect()
    }

    /// Layer position of conv layer `l` (1-based).
    pub fn conv_position(&self, l: usize) -> Result<usize> {
        if l == 0 || l > self.conv_count() {
            return Err(Error::OutOfBounds(format!(
                "conv layer {l} of {}",
                self.conv_count()
            )));
        }
        Ok(self.conv_positions[l - 1])
    }

    /// Conv index (1-based) of the layer at `position`, if it is a conv.
    pub fn conv_index_at(&self, position: usize) -> Option<usize> {
        self.conv_positions
            .iter()
            .position(|&p| p == position)
            .map(|i| i + 1)
    }

    pub fn filters_in(&self, l: usize) -> Result<usize> {
        Ok(self.shapes[self.conv_position(l)? + 1][0])
    }

    /// `(out_channels, kh, kw, stride, pad, groups)` of conv layer `l`.
    pub fn conv_params(&self, l: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
        match self.layers[self.conv_position(l)?] {
            LayerSpec::Conv {
                out_channels,
                kh,
                kw,
                stride,
                pad,
                groups,
            } => Ok((out_channels, kh, kw, stride, pad, groups)),
            _ => unreachable!(),
        }
    }

    /// Layers strictly between conv `l` and the next conv (or the end,
    /// for the last conv). `l == 0` names the layers before conv 1.
    pub fn stage_layers(&self, l: usize) -> &[LayerSpec] {
        let start = if l == 0 {
            0
        } else {
            self.conv_positions[l - 1] + 1
        };
        let end = self
            .conv_positions
            .get(l)
            .copied()
            .unwrap_or(self.layers.len());
        &self.layers[start..end]
    }

    /// Layers after conv `k`, as a standalone network whose input has
    /// `in_channels` channels at conv `k`'s output resolution.
    pub fn tail_after_conv(&self, k: usize, in_channels: usize) -> Result<NetSpec> {
        let pos = self.conv_position(k)?;
        let out = &self.shapes[pos + 1];
        let mut layers = self.layers[pos + 1..].to_vec();
        if let Some(p) = self.conv_positions.iter().position(|&p| p > pos) {
            let next = self.conv_positions[p] - pos - 1;
            if let LayerSpec::Conv { groups, .. } = layers[next] {
                if !in_channels.is_multiple_of(groups) {
                    return Err(Error::shape(format!(
                        "{in_channels} channels do not split into {groups} groups"
                    )));
                }
            }
        }
        if layers.is_empty() {
            return Err(Error::shape("no layers above the apex"));
        }
        if let Some(LayerSpec::Dense { .. }) = layers.first() {
            layers.insert(0, LayerSpec::Flatten);
        }
        NetSpec::new(vec![in_channels, out[1], out[2]], layers)
    }

    /// Replaces the output width of the final dense layer.
    pub fn with_num_classes(&self, k: usize) -> Result<NetSpec> {
        let mut layers = self.layers.clone();
        match layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            Some(LayerSpec::Dense { out_features }) => *out_features = k,
            _ => return Err(Error::shape("network has no dense output layer")),
        }
        NetSpec::new(self.input_shape.clone(), layers)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&RawNetSpec::from(self.clone())).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snet_shapes() {
        let s = NetSpec::snet(2);
        assert_eq!(s.conv_count(), 5);
        assert_eq!(s.conv_filter_counts(), vec![8, 16, 32, 32, 32]);
        assert_eq!(s.output_shape(), &[2]);
        assert_eq!(s.shape_before(s.conv_position(4).unwrap()), &[32, 7, 7]);
    }

    #[test]
    fn rejects_inconsistent_layers() {
        assert!(NetSpec::new(vec![1, 4, 4], vec![LayerSpec::Dense { out_features: 2 }]).is_err());
        assert!(NetSpec::new(vec![3, 4, 4], vec![LayerSpec::grouped_conv(4, 3, 1, 1, 2)]).is_err());
        assert!(NetSpec::new(
            vec![1, 2, 2],
            vec![LayerSpec::MaxPool {
                window: 3,
                stride: 1
            }]
        )
        .is_err());
    }

    #[test]
    fn tail_matches_own_layer_input() {
        let s = NetSpec::snet(2);
        let tail = s.tail_after_conv(3, 32).unwrap();
        assert_eq!(tail.input_shape(), &[32, 7, 7]);
        assert_eq!(tail.layers()[0], LayerSpec::Relu);
        assert_eq!(tail.conv_count(), 2);
        assert_eq!(tail.output_shape(), &[2]);
        let t5 = s.tail_after_conv(5, 32).unwrap();
        assert_eq!(t5.conv_count(), 0);
    }

    #[test]
    fn json_roundtrip_revalidates() {
        let s = NetSpec::snet(3);
        let json = serde_json::to_string(&s).unwrap();
        let back: NetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.digest(), back.digest());
        let bad = json.replace("28", "2");
        assert!(serde_json::from_str::<NetSpec>(&bad).is_err());
    }

    #[test]
    fn stage_layers_follow_conv() {
        let s = NetSpec::snet(2);
        assert_eq!(s.stage_layers(0), &[]);
        assert_eq!(s.stage_layers(1).len(), 2);
        assert_eq!(s.stage_layers(3), &[LayerSpec::Relu]);
    }
}
