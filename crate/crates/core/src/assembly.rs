//! Fusing selected filter-trees into a frozen prefix, attaching a
//! trainable head, and the shuffle and network-transfer baselines.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::{pruned_tensors, FilterBank, PrunedMeta, Selection};
use crate::codec::TensorEntry;
use crate::error::{Error, Result};
use crate::filtertree::{
    apply_post, build_dep_graph, pack_blocks, prune_layer, ConvBlock, FilterTree, PrunedConv,
};
use crate::model::io::{param_table, params_from_table, read_cnn, write_cnn};
use crate::model::{
    self, init_net, CnnHeader, Dataset, Hyper, LayerParams, LayerSpec, NetParams, NetSpec,
    TaskData, TrainHistory,
};
use crate::ops::{conv_block_cols, conv_out_dim, im2col, ConvKernels, Window};
use crate::tensor::Tensor;

/// Layers `1..k-1` shared by every selected tree of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub source_id: String,
    pub layers: Vec<PrunedConv>,
}

impl Branch {
    /// Source indices of the channels this branch emits.
    pub fn layout(&self, input_channels: usize) -> Vec<usize> {
        match self.layers.last() {
            Some(l) => l.filters.clone(),
            None => (0..input_channels).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(PrunedConv::param_count).sum()
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }
}

/// One output channel of the prefix: an apex kernel over a slice of its
/// branch's channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ApexKernel {
    pub branch: usize,
    /// Apex filter index in the source network.
    pub source_filter: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    /// Single-filter block; `in_start` indexes the branch output.
    pub block: ConvBlock,
}

impl ApexKernel {
    fn window(&self) -> Window {
        Window {
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
        }
    }
}

/// The frozen layers `1..=k` of a target network. Output channel `i` is
/// the `i`-th selected tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrefix {
    pub apex_layer: usize,
    pub input_shape: Vec<usize>,
    pub input_ops: Vec<LayerSpec>,
    pub branches: Vec<Branch>,
    pub apex: Vec<ApexKernel>,
}

impl AssembledPrefix {
    pub fn out_channels(&self) -> usize {
        self.apex.len()
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(Branch::param_count).sum::<usize>()
            + self
                .apex
                .iter()
                .map(|a| a.block.kernels.param_count())
                .sum::<usize>()
    }

    fn input_channels(&self) -> Result<usize> {
        let mut shape = self.input_shape.clone();
        for op in &self.input_ops {
            shape = op.output_shape(&shape)?;
        }
        Ok(shape[0])
    }

    /// `[n, H', W']`.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for op in &self.input_ops {
            shape = op.output_shape(&shape)?;
        }
        let branch_shapes = self
            .branches
            .iter()
            .map(|b| {
                let mut s = shape.clone();
                for layer in &b.layers {
                    s = vec![
                        layer.out_channels(),
                        conv_out_dim(s[1], layer.kh, layer.stride, layer.pad)?,
                        conv_out_dim(s[2], layer.kw, layer.stride, layer.pad)?,
                    ];
                    for op in &layer.post {
                        s = op.output_shape(&s)?;
                    }
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out: Option<(usize, usize)> = None;
        for a in &self.apex {
            let s = &branch_shapes[a.branch];
            let hw = (
                conv_out_dim(s[1], a.kh, a.stride, a.pad)?,
                conv_out_dim(s[2], a.kw, a.stride, a.pad)?,
            );
            match out {
                Some(prev) if prev != hw => {
                    return Err(Error::shape(format!(
                        "apex outputs {prev:?} and {hw:?} differ"
                    )))
                }
                _ => out = Some(hw),
            }
        }
        let (h, w) = out.ok_or_else(|| Error::Missing("prefix has no apex kernels".into()))?;
        Ok(vec![self.apex.len(), h, w])
    }

    fn check(&self) -> Result<()> {
        let c = self.input_channels()?;
        for a in &self.apex {
            let branch = self.branches.get(a.branch).ok_or_else(|| {
                Error::OutOfBounds(format!(
                    "apex reads branch {} of {}",
                    a.branch,
                    self.branches.len()
                ))
            })?;
            let width = branch.layers.last().map_or(c, PrunedConv::out_channels);
            if a.block.kernels.out_channels() != 1 || a.block.in_start + a.block.in_len() > width {
                return Err(Error::shape("apex kernel does not fit its branch"));
            }
        }
        self.output_shape().map(|_| ())
    }
}

/// Fuses the selected bank entries in selection order.
pub fn fuse(bank: &FilterBank, selection: &Selection) -> Result<AssembledPrefix> {
    fuse_trees(&bank.selected(selection)?)
}

/// Fuses trees into one prefix. Trees sharing a source share a branch whose
/// layers carry the union of their retained filters.
pub fn fuse_trees(trees: &[&FilterTree]) -> Result<AssembledPrefix> {
    let first = trees
        .first()
        .ok_or_else(|| Error::Missing("empty selection".into()))?;
    let k = first.apex_layer();
    let mut order: Vec<&str> = Vec::new();
    for t in trees {
        if t.apex_layer() != k {
            return Err(Error::shape(format!(
                "mixed apex layers {k} and {}",
                t.apex_layer()
            )));
        }
        if t.input_shape != first.input_shape || t.input_ops != first.input_ops {
            return Err(Error::shape(format!(
                "mixed input shapes {:?} and {:?}",
                first.input_shape, t.input_shape
            )));
        }
        if !order.contains(&t.source_id.as_str()) {
            order.push(&t.source_id);
        }
    }
    let c = first.input_channels()?;
    let identity: Vec<usize> = (0..c).collect();
    let mut branches = Vec::with_capacity(order.len());
    for &source in &order {
        let members: Vec<&FilterTree> = trees
            .iter()
            .copied()
            .filter(|t| t.source_id == source)
            .collect();
        let mut layers: Vec<PrunedConv> = Vec::with_capacity(k - 1);
        for l in 0..k - 1 {
            let union: BTreeSet<usize> = members
                .iter()
                .flat_map(|t| t.layers[l].filters.iter().copied())
                .collect();
            let union: Vec<usize> = union.into_iter().collect();
            let mut kernels = Vec::with_capacity(union.len());
            for &f in &union {
                let t = members
                    .iter()
                    .find(|t| t.layers[l].filters.contains(&f))
                    .unwrap();
                let pos = t.layers[l]
                    .filters
                    .binary_search(&f)
                    .map_err(|_| Error::shape("retained set not sorted"))?;
                let tree_prev = if l == 0 {
                    &identity
                } else {
                    &t.layers[l - 1].filters
                };
                kernels.push(t.layers[l].filter_kernel(pos, tree_prev)?);
            }
            let template = &members[0].layers[l];
            let branch_prev = if l == 0 {
                &identity
            } else {
                &layers[l - 1].filters
            };
            let blocks = pack_blocks(kernels, branch_prev, template.kh, template.kw)?;
            layers.push(PrunedConv {
                kh: template.kh,
                kw: template.kw,
                stride: template.stride,
                pad: template.pad,
                filters: union,
                blocks,
                post: template.post.clone(),
            });
        }
        branches.push(Branch {
            source_id: source.to_string(),
            layers,
        });
    }
    let apex = trees
        .iter()
        .map(|t| {
            let b = order.iter().position(|s| *s == t.source_id).unwrap();
            let top = t.layers.last().unwrap();
            let tree_prev = if k == 1 {
                &identity
            } else {
                &t.layers[k - 2].filters
            };
            let kernel = top.filter_kernel(0, tree_prev)?;
            let layout = branches[b].layout(c);
            let mut blocks = pack_blocks([kernel], &layout, top.kh, top.kw)?;
            Ok(ApexKernel {
                branch: b,
                source_filter: t.apex.index,
                kh: top.kh,
                kw: top.kw,
                stride: top.stride,
                pad: top.pad,
                block: blocks.remove(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let prefix = AssembledPrefix {
        apex_layer: k,
        input_shape: first.input_shape.clone(),
        input_ops: first.input_ops.clone(),
        branches,
        apex,
    };
    prefix.check()?;
    Ok(prefix)
}

/// Runs the prefix: every branch once, then each apex kernel on its slice.
pub fn prefix_forward(prefix: &AssembledPrefix, input: &Tensor) -> Result<Tensor> {
    if input.shape() != prefix.input_shape.as_slice() {
        return Err(Error::shape(format!(
            "prefix expects input {:?}, got {:?}",
            prefix.input_shape,
            input.shape()
        )));
    }
    let x = apply_post(&prefix.input_ops, input.clone())?;
    let feats = prefix
        .branches
        .iter()
        .map(|b| b.forward(&x))
        .collect::<Result<Vec<_>>>()?;
    let mut cols_cache = HashMap::new();
    let mut out = Vec::new();
    let mut hw = (0, 0);
    for a in &prefix.apex {
        let f = if prefix.branches[a.branch].layers.is_empty() {
            &x
        } else {
            &feats[a.branch]
        };
        let (_, h, w) = f.dims3()?;
        let oh = conv_out_dim(h, a.kh, a.stride, a.pad)?;
        let ow = conv_out_dim(w, a.kw, a.stride, a.pad)?;
        hw = (oh, ow);
        let len = a.block.in_len();
        let key = (a.branch, a.block.in_start, len, a.kh, a.kw, a.stride, a.pad);
        let cols = cols_cache.entry(key).or_insert_with(|| {
            let plane = h * w;
            im2col(
                &f.data()[a.block.in_start * plane..(a.block.in_start + len) * plane],
                len,
                h,
                w,
                a.window(),
                oh,
                ow,
            )
        });
        let start = out.len();
        out.resize(start + oh * ow, 0.0);
        conv_block_cols(
            cols,
            a.block.kernels.weights().data(),
            a.block.kernels.bias().data(),
            &mut out[start..],
        );
    }
    let out = Tensor::new(vec![prefix.apex.len(), hw.0, hw.1], out)?;
    out.check_finite("prefix")?;
    Ok(out)
}

/// A frozen prefix under a trainable head network.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNet {
    pub prefix: AssembledPrefix,
    pub head_spec: NetSpec,
    pub head_params: NetParams,
}

impl TargetNet {
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        model::logits(
            &self.head_spec,
            &self.head_params,
            &prefix_forward(&self.prefix, input)?,
        )
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        model::predict(
            &self.head_spec,
            &self.head_params,
            &prefix_forward(&self.prefix, input)?,
        )
    }

    pub fn evaluate(&self, data: &Dataset, parallel: bool) -> Result<f64> {
        let feats = prefix_dataset(&self.prefix, data)?;
        model::evaluate(&self.head_spec, &self.head_params, &feats, parallel)
    }

    pub fn num_classes(&self) -> usize {
        self.head_spec.output_shape()[0]
    }
}

/// The source architecture above conv `k`, reading `n` channels, with a
/// `num_classes`-way output.
pub fn snet_head(source: &NetSpec, k: usize, n: usize, num_classes: usize) -> Result<NetSpec> {
    source.tail_after_conv(k, n)?.with_num_classes(num_classes)
}

pub fn assemble_target(
    prefix: AssembledPrefix,
    head_spec: NetSpec,
    seed: u64,
) -> Result<TargetNet> {
    let out = prefix.output_shape()?;
    if head_spec.input_shape() != out.as_slice() {
        return Err(Error::shape(format!(
            "head takes {:?} but the prefix emits {out:?}",
            head_spec.input_shape()
        )));
    }
    let head_params = init_net(&head_spec, seed);
    Ok(TargetNet {
        prefix,
        head_spec,
        head_params,
    })
}

/// Conventional transfer: layers `1..=k` of one source verbatim, in source
/// channel order, under a freshly initialized head.
pub fn network_transfer_init(
    spec: &NetSpec,
    params: &NetParams,
    source_id: &str,
    k: usize,
    head_seed: u64,
    num_classes: usize,
) -> Result<TargetNet> {
    params.check(spec)?;
    if k == 0 || k > spec.conv_count() {
        return Err(Error::OutOfBounds(format!(
            "transfer depth {k} for {} conv layers",
            spec.conv_count()
        )));
    }
    let graph = build_dep_graph(spec)?;
    let mut layers = Vec::with_capacity(k - 1);
    let mut prev: Vec<usize> = (0..graph.width(0)).collect();
    for l in 1..k {
        let all: Vec<usize> = (0..spec.filters_in(l)?).collect();
        layers.push(prune_layer(
            spec,
            params,
            &graph,
            l,
            &all,
            &prev,
            spec.stage_layers(l).to_vec(),
        )?);
        prev = all;
    }
    let (n, kh, kw, stride, pad, _) = spec.conv_params(k)?;
    let top = prune_layer(
        spec,
        params,
        &graph,
        k,
        &(0..n).collect::<Vec<_>>(),
        &prev,
        Vec::new(),
    )?;
    let apex = (0..n)
        .map(|j| {
            let mut blocks = pack_blocks([top.filter_kernel(j, &prev)?], &prev, kh, kw)?;
            Ok(ApexKernel {
                branch: 0,
                source_filter: j,
                kh,
                kw,
                stride,
                pad,
                block: blocks.remove(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let prefix = AssembledPrefix {
        apex_layer: k,
        input_shape: spec.input_shape().to_vec(),
        input_ops: spec.stage_layers(0).to_vec(),
        branches: vec![Branch {
            source_id: source_id.to_string(),
            layers,
        }],
        apex,
    };
    prefix.check()?;
    let head = snet_head(spec, k, n, num_classes)?;
    assemble_target(prefix, head, head_seed)
}

/// Reorders the filters of conv layer `l` by `perm` (new filter `i` is old
/// filter `perm[i]`). In consistent mode the next conv layer's input
/// channels follow, so the network computes the same function.
pub fn shuffle_filters(
    spec: &NetSpec,
    params: &NetParams,
    l: usize,
    perm: &[usize],
    consistent: bool,
) -> Result<NetParams> {
    params.check(spec)?;
    if l == 0 || l >= spec.conv_count() {
        return Err(Error::OutOfBounds(format!(
            "shuffle layer {l} must be below the last conv layer {}",
            spec.conv_count()
        )));
    }
    let n = spec.filters_in(l)?;
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::InvalidArgument(format!(
            "not a permutation of {n} filters"
        )));
    }
    build_dep_graph(spec)?;
    let here = params.conv(spec, l)?;
    let next = params.conv(spec, l + 1)?;
    if consistent {
        let next_group = |c: usize| c / next.in_channels_per_group();
        if (0..n).any(|i| {
            here.group_of(i) != here.group_of(perm[i]) || next_group(i) != next_group(perm[i])
        }) {
            return Err(Error::InvalidArgument(
                "permutation crosses a group boundary".into(),
            ));
        }
    }
    let flen = here.filter_len();
    let mut w = Vec::with_capacity(n * flen);
    let mut b = Vec::with_capacity(n);
    for &p in perm {
        w.extend_from_slice(here.filter(p));
        b.push(here.bias().data()[p]);
    }
    let shuffled = ConvKernels::new(
        Tensor::new(here.weights().shape().to_vec(), w)?,
        Tensor::new(vec![n], b)?,
        here.groups(),
    )?;
    let mut out = params.clone();
    *out.conv_mut(spec, l)? = shuffled;
    if consistent {
        let per = next.in_channels_per_group();
        let (kh, kw) = next.kernel_size();
        let plane = kh * kw;
        let mut nw = next.weights().data().to_vec();
        for f in 0..next.out_channels() {
            let g = next.group_of(f);
            for (i, &from) in perm.iter().enumerate().skip(g * per).take(per) {
                let dst = (f * per + i - g * per) * plane;
                let src = next.filter(f)[(from - g * per) * plane..][..plane].to_vec();
                nw[dst..dst + plane].copy_from_slice(&src);
            }
        }
        out.conv_mut(spec, l + 1)?
            .weights_mut()
            .copy_from_slice(&nw);
    }
    Ok(out)
}

/// Prefix features of every image.
pub fn prefix_dataset(prefix: &AssembledPrefix, data: &Dataset) -> Result<Dataset> {
    data.map_images(|x| prefix_forward(prefix, x))
}

/// Trains the head on cached prefix features; the prefix is untouched.
pub fn train_target(
    target: &TargetNet,
    data: &TaskData,
    hyper: &Hyper,
) -> Result<(TargetNet, TrainHistory)> {
    let feats = TaskData {
        train: prefix_dataset(&target.prefix, &data.train)?,
        test: prefix_dataset(&target.prefix, &data.test)?,
    };
    train_head(target, &feats, hyper)
}

/// Like [`train_target`] on features already computed with [`prefix_dataset`].
pub fn train_head(
    target: &TargetNet,
    features: &TaskData,
    hyper: &Hyper,
) -> Result<(TargetNet, TrainHistory)> {
    let (head_params, history) =
        model::train(&target.head_spec, &target.head_params, 0, features, hyper)?;
    Ok((
        TargetNet {
            prefix: target.prefix.clone(),
            head_spec: target.head_spec.clone(),
            head_params,
        },
        history,
    ))
}

#[derive(Serialize, Deserialize)]
struct ApexMeta {
    branch: usize,
    source_filter: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    in_start: usize,
    in_len: usize,
}

#[derive(Serialize, Deserialize)]
struct BranchMeta {
    source_id: String,
    layers: Vec<PrunedMeta>,
}

#[derive(Serialize, Deserialize)]
struct TargetMeta {
    frozen_depth: usize,
    input_shape: Vec<usize>,
    input_ops: Vec<LayerSpec>,
    branches: Vec<BranchMeta>,
    apex: Vec<ApexMeta>,
}

impl TargetMeta {
    fn table(&self) -> Vec<TensorEntry> {
        let mut t = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            for (l, layer) in branch.layers.iter().enumerate() {
                t.extend(layer.table(&format!("prefix.branch{b}.layer{l}.")));
            }
        }
        for (i, a) in self.apex.iter().enumerate() {
            t.push(TensorEntry {
                name: format!("prefix.apex{i}.weight"),
                shape: vec![1, a.in_len, a.kh, a.kw],
            });
            t.push(TensorEntry {
                name: format!("prefix.apex{i}.bias"),
                shape: vec![1],
            });
        }
        t
    }
}

pub fn save_target(target: &TargetNet, path: impl AsRef<Path>) -> Result<()> {
    let p = &target.prefix;
    let meta = TargetMeta {
        frozen_depth: p.apex_layer,
        input_shape: p.input_shape.clone(),
        input_ops: p.input_ops.clone(),
        branches: p
            .branches
            .iter()
            .map(|b| BranchMeta {
                source_id: b.source_id.clone(),
                layers: b.layers.iter().map(PrunedMeta::of).collect(),
            })
            .collect(),
        apex: p
            .apex
            .iter()
            .map(|a| ApexMeta {
                branch: a.branch,
                source_filter: a.source_filter,
                kh: a.kh,
                kw: a.kw,
                stride: a.stride,
                pad: a.pad,
                in_start: a.block.in_start,
                in_len: a.block.in_len(),
            })
            .collect(),
    };
    let (mut entries, mut tensors) = param_table(&target.head_spec, &target.head_params, "head.");
    entries.extend(meta.table());
    for b in &p.branches {
        for layer in &b.layers {
            tensors.extend(pruned_tensors(layer));
        }
    }
    for a in &p.apex {
        tensors.push(a.block.kernels.weights());
        tensors.push(a.block.kernels.bias());
    }
    let header = CnnHeader {
        kind: "target".into(),
        spec: target.head_spec.clone(),
        seed: target.head_params.seed(),
        tensors: entries,
        target: Some(serde_json::to_value(&meta)?),
    };
    write_cnn(path.as_ref(), &header, &tensors)
}

fn target_from_parts(header: CnnHeader, tensors: Vec<Tensor>) -> Result<TargetNet> {
    let meta: TargetMeta = serde_json::from_value(
        header
            .target
            .ok_or_else(|| Error::Header("target file without prefix structure".into()))?,
    )
    .map_err(|e| Error::Header(format!("prefix structure: {e}")))?;
    let head_len = header
        .tensors
        .iter()
        .take_while(|e| e.name.starts_with("head."))
        .count();
    let prefix_table = meta.table();
    if header.tensors[head_len..] != prefix_table[..] {
        return Err(Error::ShapeTable(
            "prefix tensors do not match the prefix structure".into(),
        ));
    }
    let mut tensors = tensors.into_iter();
    let head: Vec<Tensor> = tensors.by_ref().take(head_len).collect();
    let head_params =
        params_from_table(&header.spec, &header.tensors[..head_len], head, header.seed)?;
    let branches = meta
        .branches
        .iter()
        .map(|b| {
            let layers = b
                .layers
                .iter()
                .map(|l| l.rebuild(&mut tensors))
                .collect::<Result<Vec<_>>>()?;
            Ok(Branch {
                source_id: b.source_id.clone(),
                layers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let apex = meta
        .apex
        .iter()
        .map(|a| {
            let w = tensors.next().unwrap();
            let bias = tensors.next().unwrap();
            Ok(ApexKernel {
                branch: a.branch,
                source_filter: a.source_filter,
                kh: a.kh,
                kw: a.kw,
                stride: a.stride,
                pad: a.pad,
                block: ConvBlock {
                    in_start: a.in_start,
                    kernels: ConvKernels::new(w, bias, 1)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let prefix = AssembledPrefix {
        apex_layer: meta.frozen_depth,
        input_shape: meta.input_shape,
        input_ops: meta.input_ops,
        branches,
        apex,
    };
    prefix.check()?;
    if prefix.output_shape()? != header.spec.input_shape() {
        return Err(Error::shape("stored head does not match the stored prefix"));
    }
    Ok(TargetNet {
        prefix,
        head_spec: header.spec,
        head_params,
    })
}

pub fn load_target(path: impl AsRef<Path>) -> Result<TargetNet> {
    let (header, tensors) = read_cnn(path.as_ref())?;
    if header.kind != "target" {
        return Err(Error::Header(format!(
            "{} holds a {:?} network, not a target",
            path.as_ref().display(),
            header.kind
        )));
    }
    target_from_parts(header, tensors)
}

/// Either kind of `.cnn` file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Net { spec: NetSpec, params: NetParams },
    Target(TargetNet),
}

impl Model {
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Model::Net { spec, params } => model::logits(spec, params, input),
            Model::Target(t) => t.logits(input),
        }
    }

    pub fn evaluate(&self, data: &Dataset, parallel: bool) -> Result<f64> {
        match self {
            Model::Net { spec, params } => model::evaluate(spec, params, data, parallel),
            Model::Target(t) => t.evaluate(data, parallel),
        }
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let (header, tensors) = read_cnn(path.as_ref())?;
    match header.kind.as_str() {
        "net" => {
            let params = params_from_table(&header.spec, &header.tensors, tensors, header.seed)?;
            Ok(Model::Net {
                spec: header.spec,
                params,
            })
        }
        "target" => target_from_parts(header, tensors).map(Model::Target),
        other => Err(Error::Header(format!("unknown network kind {other:?}"))),
    }
}

/// Parameters of every conv layer up to `k`, the part a prefix reads.
pub fn prefix_param_count(spec: &NetSpec, params: &NetParams, k: usize) -> Result<usize> {
    let end = spec.conv_position(k)?;
    Ok(params.layers()[..=end]
        .iter()
        .map(LayerParams::param_count)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{build_bank, sample, BankSource};
    use crate::filtertree::{captured_channel, extract_tree, tree_forward, FilterId};
    use crate::model::forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grouped_spec() -> NetSpec {
        NetSpec::new(
            vec![2, 12, 12],
            vec![
                LayerSpec::grouped_conv(6, 3, 1, 1, 2),
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::grouped_conv(6, 3, 1, 1, 3),
                LayerSpec::Relu,
                LayerSpec::conv(4, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 3 },
            ],
        )
        .unwrap()
    }

    fn input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn bank_of(spec: &NetSpec, nets: &[NetParams], k: usize) -> FilterBank {
        let ids: Vec<String> = (0..nets.len()).map(|i| format!("s{i}")).collect();
        let src: Vec<BankSource> = nets
            .iter()
            .zip(&ids)
            .map(|(p, id)| BankSource {
                spec,
                params: p,
                source_id: id,
                task: "t",
            })
            .collect();
        build_bank(&src, k).unwrap()
    }

    #[test]
    fn fused_channels_equal_trees_exactly() {
        let spec = grouped_spec();
        let nets: Vec<NetParams> = (0..3).map(|s| init_net(&spec, s)).collect();
        for k in 1..=3 {
            let bank = bank_of(&spec, &nets, k);
            for seed in 0..4 {
                let n = 1 + seed as usize * 2;
                let sel = sample(&bank, n.min(bank.len()), seed).unwrap();
                let prefix = fuse(&bank, &sel).unwrap();
                let x = input(&[2, 12, 12], seed);
                let out = prefix_forward(&prefix, &x).unwrap();
                for (i, tree) in bank.selected(&sel).unwrap().into_iter().enumerate() {
                    let t = tree_forward(tree, &x).unwrap();
                    assert_eq!(out.channel(i), t.data(), "k={k} seed={seed} channel {i}");
                }
            }
        }
    }

    #[test]
    fn branch_count_and_memory_law() {
        let spec = NetSpec::snet(2);
        let nets: Vec<NetParams> = (0..4).map(|s| init_net(&spec, s)).collect();
        let bank = bank_of(&spec, &nets, 3);
        let full_prefix = prefix_param_count(&spec, &nets[0], 2).unwrap();
        for seed in 0..5 {
            let sel = sample(&bank, 32, seed).unwrap();
            let prefix = fuse(&bank, &sel).unwrap();
            let sources: BTreeSet<&str> = bank
                .selected(&sel)
                .unwrap()
                .iter()
                .map(|t| t.source_id.as_str())
                .collect();
            assert_eq!(prefix.branches.len(), sources.len());
            let apex_params: usize = prefix
                .apex
                .iter()
                .map(|a| a.block.kernels.param_count())
                .sum();
            assert!(prefix.param_count() <= sources.len() * full_prefix + apex_params);
            for b in &prefix.branches {
                assert!(b.layers[1].out_channels() <= 16);
            }
        }
    }

    #[test]
    fn one_source_full_selection_is_the_source_prefix() {
        let spec = NetSpec::snet(2);
        let net = init_net(&spec, 7);
        let bank = bank_of(&spec, std::slice::from_ref(&net), 3);
        let sel = sample(&bank, bank.len(), 11).unwrap();
        let prefix = fuse(&bank, &sel).unwrap();
        assert_eq!(prefix.branches.len(), 1);
        assert_eq!(
            prefix.branches[0].layers[0].filters,
            (0..8).collect::<Vec<_>>()
        );
        assert_eq!(
            prefix.branches[0].layers[1].filters,
            (0..16).collect::<Vec<_>>()
        );
        let x = input(&[1, 28, 28], 1);
        let out = prefix_forward(&prefix, &x).unwrap();
        let (_, caps) = forward(&spec, &net, &x, &[3]).unwrap();
        let full = &caps[&3].pre_activation;
        for (i, &j) in sel.indices.iter().enumerate() {
            let f = bank.entries()[j].apex.index;
            assert_eq!(out.channel(i), full.channel(f));
        }

        let transfer = network_transfer_init(&spec, &net, "s0", 3, 0, 2).unwrap();
        let t_out = prefix_forward(&transfer.prefix, &x).unwrap();
        assert!(t_out.bit_eq(full));
    }

    #[test]
    fn single_tree_and_zero_input() {
        let spec = grouped_spec();
        let mut net = init_net(&spec, 3);
        let tree = extract_tree(&spec, &net, "a", FilterId::new(2, 4)).unwrap();
        let prefix = fuse_trees(&[&tree]).unwrap();
        let x = input(&[2, 12, 12], 9);
        assert!(prefix_forward(&prefix, &x)
            .unwrap()
            .bit_eq(&tree_forward(&tree, &x).unwrap()));
        assert!(
            prefix_forward(&prefix, &x)
                .unwrap()
                .max_abs_diff(&captured_channel(&spec, &net, tree.apex, &x).unwrap())
                <= 1e-5
        );

        for l in 1..=3 {
            net.conv_mut(&spec, l).unwrap().bias_mut().fill(0.0);
        }
        let tree = extract_tree(&spec, &net, "a", FilterId::new(3, 1)).unwrap();
        let zero = Tensor::zeros(&[2, 12, 12]);
        let out = prefix_forward(&fuse_trees(&[&tree]).unwrap(), &zero).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_rejects_mixed_trees() {
        let spec = grouped_spec();
        let net = init_net(&spec, 3);
        let a = extract_tree(&spec, &net, "a", FilterId::new(2, 0)).unwrap();
        let b = extract_tree(&spec, &net, "a", FilterId::new(3, 0)).unwrap();
        assert!(matches!(fuse_trees(&[&a, &b]), Err(Error::Shape(_))));
        let other = NetSpec::new(vec![2, 14, 14], spec.layers().to_vec()).unwrap();
        let c = extract_tree(&other, &init_net(&other, 1), "c", FilterId::new(2, 0)).unwrap();
        assert!(matches!(fuse_trees(&[&a, &c]), Err(Error::Shape(_))));
    }

    #[test]
    fn snet_head_matches_layer_four_input() {
        let spec = NetSpec::snet(2);
        let nets: Vec<NetParams> = (0..4).map(|s| init_net(&spec, s)).collect();
        let bank = bank_of(&spec, &nets, 3);
        let prefix = fuse(&bank, &sample(&bank, 32, 0).unwrap()).unwrap();
        let head = snet_head(&spec, 3, 32, 2).unwrap();
        assert_eq!(
            head.input_shape(),
            spec.shape_before(spec.conv_position(4).unwrap())
        );
        let a = assemble_target(prefix.clone(), head.clone(), 5).unwrap();
        let b = assemble_target(prefix.clone(), head, 5).unwrap();
        assert!(a.head_params.bit_eq(&b.head_params));
        assert!(matches!(
            assemble_target(prefix.clone(), snet_head(&spec, 3, 16, 2).unwrap(), 0),
            Err(Error::Shape(_))
        ));

        let pooled = NetSpec::new(
            vec![32, 7, 7],
            vec![
                LayerSpec::MaxPool {
                    window: 7,
                    stride: 7,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 4 },
            ],
        )
        .unwrap();
        let t = assemble_target(prefix, pooled, 1).unwrap();
        assert_eq!(t.logits(&input(&[1, 28, 28], 0)).unwrap().shape(), &[4]);
    }

    #[test]
    fn shuffles() {
        let spec = grouped_spec();
        let net = init_net(&spec, 4);
        let id: Vec<usize> = (0..6).collect();
        for consistent in [true, false] {
            assert!(shuffle_filters(&spec, &net, 1, &id, consistent)
                .unwrap()
                .bit_eq(&net));
        }
        // Layer 1 has 2 groups of 3 filters, layer 2 has 3 groups of 2 inputs;
        // swapping 0 and 1 stays inside both.
        let perm = [1, 0, 2, 3, 4, 5];
        let shuffled = shuffle_filters(&spec, &net, 1, &perm, true).unwrap();
        let x = input(&[2, 12, 12], 2);
        let d = model::logits(&spec, &net, &x)
            .unwrap()
            .max_abs_diff(&model::logits(&spec, &shuffled, &x).unwrap());
        assert!(d <= 1e-4, "{d}");
        assert!(shuffle_filters(&spec, &net, 1, &[2, 1, 0, 3, 4, 5], true).is_err());
        assert!(shuffle_filters(&spec, &net, 1, &[3, 1, 2, 0, 4, 5], false).is_ok());
        assert!(shuffle_filters(&spec, &net, 1, &[0, 0, 2, 3, 4, 5], false).is_err());
        assert!(shuffle_filters(&spec, &net, 3, &[0, 1, 2, 3], false).is_err());

        let snet = NetSpec::snet(3);
        let p = init_net(&snet, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut perm: Vec<usize> = (0..16).collect();
        for i in (1..16).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let c = shuffle_filters(&snet, &p, 2, &perm, true).unwrap();
        let d = shuffle_filters(&snet, &p, 2, &perm, false).unwrap();
        let x = input(&[1, 28, 28], 5);
        let base = model::logits(&snet, &p, &x).unwrap();
        assert!(base.max_abs_diff(&model::logits(&snet, &c, &x).unwrap()) <= 1e-4);
        assert!(base.max_abs_diff(&model::logits(&snet, &d, &x).unwrap()) > 1e-3);
    }

    #[test]
    fn target_roundtrip_and_training_freezes_prefix() {
        let spec = grouped_spec();
        let nets: Vec<NetParams> = (0..2).map(|s| init_net(&spec, s)).collect();
        let bank = bank_of(&spec, &nets, 2);
        let prefix = fuse(&bank, &sample(&bank, 5, 3).unwrap()).unwrap();
        let head = NetSpec::new(
            vec![5, 6, 6],
            vec![
                LayerSpec::Relu,
                LayerSpec::conv(4, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 2 },
            ],
        )
        .unwrap();
        let target = assemble_target(prefix, head, 2).unwrap();
        let images: Vec<Tensor> = (0..16).map(|i| input(&[2, 12, 12], 100 + i)).collect();
        let labels: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let data = Dataset {
            images,
            labels,
            num_classes: 2,
        };
        let task = TaskData {
            train: data.clone(),
            test: data,
        };
        let hyper = Hyper {
            iterations: 20,
            batch: 4,
            eval_every: 10,
            ..Hyper::default()
        };
        let (trained, hist) = train_target(&target, &task, &hyper).unwrap();
        assert_eq!(trained.prefix, target.prefix);
        assert!(!trained.head_params.bit_eq(&target.head_params));
        assert_eq!(hist.evals.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cnn");
        save_target(&trained, &path).unwrap();
        let back = load_target(&path).unwrap();
        assert_eq!(back.prefix, trained.prefix);
        assert!(back.head_params.bit_eq(&trained.head_params));
        let x = input(&[2, 12, 12], 0);
        assert!(back
            .logits(&x)
            .unwrap()
            .bit_eq(&trained.logits(&x).unwrap()));
        assert!(matches!(load_model(&path).unwrap(), Model::Target(_)));
        assert!(matches!(
            crate::model::load_net(&path),
            Err(Error::Header(_))
        ));
    }
}
