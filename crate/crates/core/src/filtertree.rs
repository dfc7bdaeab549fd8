//! Channel-dependency graphs and filter-trees.
//!
//! The filter-tree of filter `j` in conv layer `k` is the subnetwork made of
//! that filter and every filter in layers `1..k` it transitively reads,
//! with the kernels restricted to those filters. Running the tree on an
//! input reproduces channel `j` of the source network's layer-`k` output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, LayerParams, LayerSpec, NetParams, NetSpec};
use crate::ops::{conv_block, conv_out_dim, ConvKernels, Window};
use crate::tensor::Tensor;

/// Filter `index` (0-based) of conv layer `layer` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FilterId {
    pub layer: usize,
    pub index: usize,
}

impl FilterId {
    pub fn new(layer: usize, index: usize) -> Self {
        FilterId { layer, index }
    }
}

/// For every conv layer `l`, which channels of the previous layer (or of the
/// input, for `l == 1`) each filter reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDepGraph {
    /// `deps[l - 1][j]` is a sorted, contiguous channel range of layer `l - 1`.
    deps: Vec<Vec<(usize, usize)>>,
    /// Channel counts of the input followed by `N^1..N^L`.
    widths: Vec<usize>,
}

impl ChannelDepGraph {
    pub fn conv_count(&self) -> usize {
        self.deps.len()
    }

    /// Filters in layer `l`; `l == 0` is the input.
    pub fn width(&self, l: usize) -> usize {
        self.widths[l]
    }

    /// Sorted channels of layer `l - 1` read by filter `j` of layer `l`.
    pub fn deps(&self, l: usize, j: usize) -> Vec<usize> {
        let (start, len) = self.deps[l - 1][j];
        (start..start + len).collect()
    }

    pub(crate) fn dep_range(&self, l: usize, j: usize) -> (usize, usize) {
        self.deps[l - 1][j]
    }

    /// Retained filter sets for layers `0..k` (layer 0 = input channels)
    /// reachable backwards from `apex`, each sorted.
    pub fn reachable(&self, apex: FilterId) -> Result<Vec<Vec<usize>>> {
        if apex.layer == 0 || apex.layer > self.conv_count() {
            return Err(Error::OutOfBounds(format!(
                "apex layer {} of {}",
                apex.layer,
                self.conv_count()
            )));
        }
        if apex.index >= self.widths[apex.layer] {
            return Err(Error::OutOfBounds(format!(
                "apex filter {} of {} in layer {}",
                apex.index, self.widths[apex.layer], apex.layer
            )));
        }
        let k = apex.layer;
        let mut sets = vec![Vec::new(); k + 1];
        sets[k] = vec![apex.index];
        for l in (1..=k).rev() {
            let mut mark = vec![false; self.widths[l - 1]];
            for &j in &sets[l] {
                let (s, n) = self.deps[l - 1][j];
                mark[s..s + n].iter_mut().for_each(|m| *m = true);
            }
            sets[l - 1] = mark
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| i)
                .collect();
        }
        sets.pop();
        Ok(sets)
    }
}

/// Builds the dependency graph. Only channel-preserving layers (activation,
/// pooling) may sit between convolutions; anything that mixes channels
/// outside a conv is rejected.
pub fn build_dep_graph(spec: &NetSpec) -> Result<ChannelDepGraph> {
    let mut deps = Vec::with_capacity(spec.conv_count());
    let mut widths = vec![spec.input_shape()[0]];
    for l in 1..=spec.conv_count() {
        for layer in spec.stage_layers(l - 1) {
            if !layer.is_channel_preserving() {
                return Err(Error::Unsupported(format!(
                    "{layer:?} between conv layers mixes channels; filter-trees need channel-separable intermediates"
                )));
            }
        }
        let (out, _, _, _, _, groups) = spec.conv_params(l)?;
        let inputs = *widths.last().unwrap();
        let ipg = inputs / groups;
        let opg = out / groups;
        deps.push((0..out).map(|j| ((j / opg) * ipg, ipg)).collect());
        widths.push(out);
    }
    Ok(ChannelDepGraph { deps, widths })
}

/// Dense filters reading one contiguous channel range of the previous
/// layer's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub in_start: usize,
    /// `groups == 1`, `in_channels == in_len`.
    pub kernels: ConvKernels,
}

impl ConvBlock {
    pub fn in_len(&self) -> usize {
        self.kernels.in_channels()
    }
}

/// A conv layer restricted to a subset of its filters, in the channel
/// layout of a pruned previous layer, followed by the stage's
/// channel-preserving layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedConv {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    /// Source filter index of each output channel, in output order.
    pub filters: Vec<usize>,
    /// Blocks in output order; their output counts sum to `filters.len()`.
    pub blocks: Vec<ConvBlock>,
    /// Activation/pooling applied after the convolution.
    pub post: Vec<LayerSpec>,
}

impl PrunedConv {
    pub fn out_channels(&self) -> usize {
        self.filters.len()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.kernels.param_count()).sum()
    }

    /// Convolution only, without `post`.
    pub fn conv(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.dims3()?;
        let oh = conv_out_dim(h, self.kh, self.stride, self.pad)?;
        let ow = conv_out_dim(w, self.kw, self.stride, self.pad)?;
        let win = Window {
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
        };
        let plane = h * w;
        let mut out = vec![0.0f32; self.out_channels() * oh * ow];
        let mut offset = 0;
        for b in &self.blocks {
            let len = b.in_len();
            if b.in_start + len > c {
                return Err(Error::shape(format!(
                    "block reads channels {}..{} of {c}",
                    b.in_start,
                    b.in_start + len
                )));
            }
            let n = b.kernels.out_channels() * oh * ow;
            conv_block(
                &x.data()[b.in_start * plane..(b.in_start + len) * plane],
                len,
                h,
                w,
                b.kernels.weights().data(),
                b.kernels.bias().data(),
                win,
                oh,
                ow,
                &mut out[offset..offset + n],
            );
            offset += n;
        }
        let out = Tensor::new(vec![self.out_channels(), oh, ow], out)?;
        out.check_finite("pruned conv")?;
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        apply_post(&self.post, self.conv(x)?)
    }

    /// Kernel of the filter at position `pos`, with its input range
    /// translated back to source channels through `prev_layout`.
    pub(crate) fn filter_kernel(
        &self,
        pos: usize,
        prev_layout: &[usize],
    ) -> Result<FilterKernel<'_>> {
        let mut first = 0;
        for b in &self.blocks {
            let n = b.kernels.out_channels();
            if pos < first + n {
                let r = pos - first;
                let start = *prev_layout.get(b.in_start).ok_or_else(|| {
                    Error::OutOfBounds(format!(
                        "block start {} of {}",
                        b.in_start,
                        prev_layout.len()
                    ))
                })?;
                return Ok(FilterKernel {
                    range: (start, b.in_len()),
                    weights: b.kernels.filter(r),
                    bias: b.kernels.bias().data()[r],
                });
            }
            first += n;
        }
        Err(Error::OutOfBounds(format!(
            "filter position {pos} of {}",
            self.out_channels()
        )))
    }
}

pub(crate) fn apply_post(layers: &[LayerSpec], mut x: Tensor) -> Result<Tensor> {
    for layer in layers {
        x = crate::model::apply_plain_layer(layer, &x)?;
    }
    Ok(x)
}

/// One filter's kernel together with the source channels it reads.
pub(crate) struct FilterKernel<'a> {
    /// `(first source channel, count)` of the filter's input range.
    pub range: (usize, usize),
    pub weights: &'a [f32],
    pub bias: f32,
}

/// Packs filters, in order, into blocks over a previous-layer layout given
/// as sorted source indices. Consecutive filters with the same input range
/// share a block.
pub(crate) fn pack_blocks<'a>(
    kernels: impl IntoIterator<Item = FilterKernel<'a>>,
    prev_layout: &[usize],
    kh: usize,
    kw: usize,
) -> Result<Vec<ConvBlock>> {
    let mut blocks = Vec::new();
    // (channel range, weights, biases) of the block being accumulated.
    type Pending = ((usize, usize), Vec<f32>, Vec<f32>);
    let mut pending: Option<Pending> = None;
    let flush = |range: (usize, usize),
                 w: Vec<f32>,
                 b: Vec<f32>,
                 blocks: &mut Vec<ConvBlock>|
     -> Result<()> {
        let start = prev_layout
            .binary_search(&range.0)
            .map_err(|_| Error::shape(format!("channel {} missing from pruned layout", range.0)))?;
        if prev_layout.get(start + range.1 - 1) != Some(&(range.0 + range.1 - 1)) {
            return Err(Error::shape(
                "dependency range not contiguous in pruned layout",
            ));
        }
        let wt = Tensor::new(vec![b.len(), range.1, kh, kw], w)?;
        let bt = Tensor::new(vec![b.len()], b)?;
        blocks.push(ConvBlock {
            in_start: start,
            kernels: ConvKernels::new(wt, bt, 1)?,
        });
        Ok(())
    };
    for k in kernels {
        match &mut pending {
            Some((r, w, b)) if *r == k.range => {
                w.extend_from_slice(k.weights);
                b.push(k.bias);
            }
            _ => {
                if let Some((r, w, b)) = pending.take() {
                    flush(r, w, b, &mut blocks)?;
                }
                pending = Some((k.range, k.weights.to_vec(), vec![k.bias]));
            }
        }
    }
    if let Some((r, w, b)) = pending {
        flush(r, w, b, &mut blocks)?;
    }
    Ok(blocks)
}

/// Slices the kernels of `filters` (sorted, from conv layer `l`) into
/// blocks over a previous-layer layout given as sorted source indices.
pub(crate) fn prune_layer(
    spec: &NetSpec,
    params: &NetParams,
    graph: &ChannelDepGraph,
    l: usize,
    filters: &[usize],
    prev_layout: &[usize],
    post: Vec<LayerSpec>,
) -> Result<PrunedConv> {
    let (_, kh, kw, stride, pad, _) = spec.conv_params(l)?;
    let kernels = params.conv(spec, l)?;
    let blocks = pack_blocks(
        filters.iter().map(|&j| FilterKernel {
            range: graph.dep_range(l, j),
            weights: kernels.filter(j),
            bias: kernels.bias().data()[j],
        }),
        prev_layout,
        kh,
        kw,
    )?;
    Ok(PrunedConv {
        kh,
        kw,
        stride,
        pad,
        filters: filters.to_vec(),
        blocks,
        post,
    })
}

/// A self-contained feature extractor for one apex filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTree {
    pub source_id: String,
    pub apex: FilterId,
    pub input_shape: Vec<usize>,
    /// Channel-preserving layers applied to the input before conv 1.
    pub input_ops: Vec<LayerSpec>,
    /// Pruned conv layers `1..=k`; the last holds only the apex and has no
    /// `post` layers.
    pub layers: Vec<PrunedConv>,
}

impl FilterTree {
    /// Sorted source filter indices retained at conv layer `l` (`1..k`).
    pub fn retained(&self, l: usize) -> &[usize] {
        &self.layers[l - 1].filters
    }

    pub fn apex_layer(&self) -> usize {
        self.apex.layer
    }

    pub fn apex_kernel(&self) -> &ConvBlock {
        &self.layers.last().unwrap().blocks[0]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(PrunedConv::param_count).sum()
    }

    /// Input shape of the apex convolution.
    pub fn apex_input_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for op in &self.input_ops {
            shape = op.output_shape(&shape)?;
        }
        for layer in &self.layers[..self.layers.len() - 1] {
            shape = conv_shape(layer, &shape)?;
            for op in &layer.post {
                shape = op.output_shape(&shape)?;
            }
        }
        Ok(shape)
    }

    /// Output shape `[1, H', W']`.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        conv_shape(self.layers.last().unwrap(), &self.apex_input_shape()?)
    }

    /// Copy with retained sets renumbered to their positions, so trees
    /// from a source and from its materialized subnetwork compare equal.
    pub fn canonical(&self) -> FilterTree {
        let mut t = self.clone();
        for layer in &mut t.layers {
            layer.filters = (0..layer.filters.len()).collect();
        }
        t.apex.index = 0;
        t
    }

    /// The tree as an ordinary network, when every pruned layer can be
    /// written as a (grouped) convolution.
    pub fn materialize(&self) -> Result<(NetSpec, NetParams)> {
        let mut layers = self.input_ops.clone();
        let mut params: Vec<LayerParams> = vec![LayerParams::None; self.input_ops.len()];
        let mut channels = self.input_channels()?;
        for pruned in &self.layers {
            let groups = pruned.blocks.len();
            let per_out = pruned.blocks[0].kernels.out_channels();
            let per_in = pruned.blocks[0].in_len();
            let uniform = pruned.blocks.iter().enumerate().all(|(g, b)| {
                b.kernels.out_channels() == per_out
                    && b.in_len() == per_in
                    && b.in_start == g * per_in
            }) && per_in * groups == channels;
            if !uniform {
                return Err(Error::Unsupported(
                    "pruned layer is not expressible as a grouped conv".into(),
                ));
            }
            let mut w = Vec::new();
            let mut b = Vec::new();
            for block in &pruned.blocks {
                w.extend_from_slice(block.kernels.weights().data());
                b.extend_from_slice(block.kernels.bias().data());
            }
            let out = pruned.out_channels();
            let kernels = ConvKernels::new(
                Tensor::new(vec![out, per_in, pruned.kh, pruned.kw], w)?,
                Tensor::new(vec![out], b)?,
                groups,
            )?;
            layers.push(LayerSpec::Conv {
                out_channels: out,
                kh: pruned.kh,
                kw: pruned.kw,
                stride: pruned.stride,
                pad: pruned.pad,
                groups,
            });
            params.push(LayerParams::Conv(kernels));
            for op in &pruned.post {
                layers.push(*op);
                params.push(LayerParams::None);
            }
            channels = out;
        }
        let spec = NetSpec::new(self.input_shape.clone(), layers)?;
        let params = NetParams::from_layers(&spec, params, 0)?;
        Ok((spec, params))
    }

    pub(crate) fn input_channels(&self) -> Result<usize> {
        let mut shape = self.input_shape.clone();
        for op in &self.input_ops {
            shape = op.output_shape(&shape)?;
        }
        Ok(shape[0])
    }
}

fn conv_shape(layer: &PrunedConv, input: &[usize]) -> Result<Vec<usize>> {
    Ok(vec![
        layer.out_channels(),
        conv_out_dim(input[1], layer.kh, layer.stride, layer.pad)?,
        conv_out_dim(input[2], layer.kw, layer.stride, layer.pad)?,
    ])
}

/// Extracts the filter-tree rooted at `apex`.
pub fn extract_tree(
    spec: &NetSpec,
    params: &NetParams,
    source_id: &str,
    apex: FilterId,
) -> Result<FilterTree> {
    let graph = build_dep_graph(spec)?;
    extract_with_graph(spec, params, &graph, source_id, apex)
}

pub(crate) fn extract_with_graph(
    spec: &NetSpec,
    params: &NetParams,
    graph: &ChannelDepGraph,
    source_id: &str,
    apex: FilterId,
) -> Result<FilterTree> {
    params.check(spec)?;
    let sets = graph.reachable(apex)?;
    let k = apex.layer;
    let input_layout: Vec<usize> = (0..graph.width(0)).collect();
    let mut layers = Vec::with_capacity(k);
    for l in 1..=k {
        let filters: &[usize] = if l == k {
            std::slice::from_ref(&apex.index)
        } else {
            &sets[l]
        };
        let post = if l == k {
            Vec::new()
        } else {
            spec.stage_layers(l).to_vec()
        };
        // The tree sees the whole input, so layer 1 indexes it unpruned.
        let prev = if l == 1 { &input_layout } else { &sets[l - 1] };
        layers.push(prune_layer(spec, params, graph, l, filters, prev, post)?);
    }
    Ok(FilterTree {
        source_id: source_id.to_string(),
        apex,
        input_shape: spec.input_shape().to_vec(),
        input_ops: spec.stage_layers(0).to_vec(),
        layers,
    })
}

/// Apex pre-activation map `[1, H', W']`.
pub fn tree_forward(tree: &FilterTree, input: &Tensor) -> Result<Tensor> {
    if input.shape() != tree.input_shape.as_slice() {
        return Err(Error::shape(format!(
            "tree expects input {:?}, got {:?}",
            tree.input_shape,
            input.shape()
        )));
    }
    let mut x = apply_post(&tree.input_ops, input.clone())?;
    for layer in &tree.layers {
        x = layer.forward(&x)?;
    }
    Ok(x)
}

/// Channel `apex.index` of the source network's layer-`k` conv output,
/// read through [`forward`]'s capture. The reference for [`tree_forward`].
pub fn captured_channel(
    spec: &NetSpec,
    params: &NetParams,
    apex: FilterId,
    input: &Tensor,
) -> Result<Tensor> {
    let (_, caps) = forward(spec, params, input, &[apex.layer])?;
    let pre = &caps[&apex.layer].pre_activation;
    let (_, h, w) = pre.dims3()?;
    Tensor::new(vec![1, h, w], pre.channel(apex.index).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_net;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grouped_net() -> NetSpec {
        NetSpec::new(
            vec![2, 10, 10],
            vec![
                LayerSpec::conv(8, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::grouped_conv(8, 3, 1, 1, 2),
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::grouped_conv(6, 3, 1, 1, 2),
                LayerSpec::Relu,
                LayerSpec::grouped_conv(4, 3, 1, 0, 2),
            ],
        )
        .unwrap()
    }

    fn with_biases(spec: &NetSpec, seed: u64) -> NetParams {
        let mut p = init_net(spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for l in 1..=spec.conv_count() {
            p.conv_mut(spec, l)
                .unwrap()
                .bias_mut()
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
        p
    }

    #[test]
    fn ungrouped_deps_are_full() {
        let g = build_dep_graph(&NetSpec::snet(2)).unwrap();
        for l in 2..=5 {
            for j in 0..g.width(l) {
                assert_eq!(g.deps(l, j), (0..g.width(l - 1)).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn grouped_deps_split_by_group() {
        let g = build_dep_graph(&grouped_net()).unwrap();
        for j in 0..4 {
            assert_eq!(g.deps(2, j), vec![0, 1, 2, 3]);
        }
        for j in 4..8 {
            assert_eq!(g.deps(2, j), vec![4, 5, 6, 7]);
        }
    }

    #[test]
    fn layer_one_tree_is_single_kernel() {
        let spec = NetSpec::snet(2);
        let p = init_net(&spec, 0);
        let t = extract_tree(&spec, &p, "a", FilterId::new(1, 3)).unwrap();
        assert_eq!(t.layers.len(), 1);
        assert_eq!(
            t.apex_kernel().kernels.filter(0),
            p.conv(&spec, 1).unwrap().filter(3)
        );
        let x = Tensor::from_fn(&[1, 28, 28], |i| ((i * 7) % 13) as f32 / 13.0);
        assert!(tree_forward(&t, &x)
            .unwrap()
            .bit_eq(&captured_channel(&spec, &p, t.apex, &x).unwrap()));
    }

    #[test]
    fn ungrouped_tree_keeps_whole_prefix() {
        let spec = NetSpec::snet(2);
        let p = init_net(&spec, 1);
        let t = extract_tree(&spec, &p, "a", FilterId::new(3, 5)).unwrap();
        assert_eq!(t.retained(1), (0..8).collect::<Vec<_>>());
        assert_eq!(t.retained(2), (0..16).collect::<Vec<_>>());
        assert_eq!(t.output_shape().unwrap(), vec![1, 7, 7]);
    }

    #[test]
    fn grouped_tree_is_strictly_smaller_and_exact() {
        let spec = grouped_net();
        let p = with_biases(&spec, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = extract_tree(&spec, &p, "g", FilterId::new(4, 3)).unwrap();
        assert_eq!(t.retained(3), vec![3, 4, 5]);
        assert_eq!(t.retained(2), vec![4, 5, 6, 7]);
        assert_eq!(t.retained(1), vec![4, 5, 6, 7]);
        for _ in 0..5 {
            let x = Tensor::from_fn(&[2, 10, 10], |_| rng.random_range(-1.0..1.0));
            let a = tree_forward(&t, &x).unwrap();
            let b = captured_channel(&spec, &p, t.apex, &x).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-5);
        }
    }

    #[test]
    fn retained_sets_are_closed_under_deps() {
        let spec = grouped_net();
        let g = build_dep_graph(&spec).unwrap();
        for j in 0..4 {
            let sets = g.reachable(FilterId::new(4, j)).unwrap();
            let mut layer_sets = sets.clone();
            layer_sets.push(vec![j]);
            for l in 1..=4 {
                let mut union: Vec<usize> =
                    layer_sets[l].iter().flat_map(|&f| g.deps(l, f)).collect();
                union.sort();
                union.dedup();
                assert_eq!(union, layer_sets[l - 1]);
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_map() {
        let spec = NetSpec::snet(2);
        let p = init_net(&spec, 1);
        let t = extract_tree(&spec, &p, "a", FilterId::new(2, 0)).unwrap();
        assert!(tree_forward(&t, &Tensor::zeros(&[1, 28, 28]))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_bounds_apex() {
        let spec = NetSpec::snet(2);
        let p = init_net(&spec, 1);
        assert!(matches!(
            extract_tree(&spec, &p, "a", FilterId::new(6, 0)),
            Err(Error::OutOfBounds(_))
        ));
        assert!(matches!(
            extract_tree(&spec, &p, "a", FilterId::new(1, 8)),
            Err(Error::OutOfBounds(_))
        ));
        assert!(matches!(
            extract_tree(&spec, &p, "a", FilterId::new(0, 0)),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn extraction_is_deterministic() {
        let spec = NetSpec::snet(2);
        let p = init_net(&spec, 1);
        let x = Tensor::from_fn(&[1, 28, 28], |i| (i as f32 * 0.1).cos());
        let a = extract_tree(&spec, &p, "a", FilterId::new(3, 2)).unwrap();
        let b = extract_tree(&spec, &p, "a", FilterId::new(3, 2)).unwrap();
        assert_eq!(a, b);
        assert!(tree_forward(&a, &x)
            .unwrap()
            .bit_eq(&tree_forward(&b, &x).unwrap()));
    }

    #[test]
    fn reextracting_materialized_tree_is_identity() {
        let spec = NetSpec::snet(2);
        let p = init_net(&spec, 9);
        let t = extract_tree(&spec, &p, "a", FilterId::new(3, 7)).unwrap();
        let (mspec, mparams) = t.materialize().unwrap();
        let again = extract_tree(&mspec, &mparams, "a", FilterId::new(3, 0)).unwrap();
        assert_eq!(t.canonical(), again.canonical());
    }

    #[test]
    fn grouped_first_layer_reads_its_own_input_group() {
        let spec = NetSpec::new(
            vec![2, 8, 8],
            vec![
                LayerSpec::grouped_conv(4, 3, 1, 1, 2),
                LayerSpec::Relu,
                LayerSpec::grouped_conv(4, 3, 1, 1, 2),
            ],
        )
        .unwrap();
        let net = crate::model::init_net(&spec, 3);
        let x = Tensor::from_fn(&[2, 8, 8], |i| ((i * 7919) % 13) as f32 / 13.0 - 0.5);
        for l in 1..=2 {
            for j in 0..4 {
                let tree = extract_tree(&spec, &net, "a", FilterId::new(l, j)).unwrap();
                let got = tree_forward(&tree, &x).unwrap();
                assert!(
                    got.bit_eq(&captured_channel(&spec, &net, tree.apex, &x).unwrap()),
                    "({l}, {j})"
                );
            }
        }
    }
}
