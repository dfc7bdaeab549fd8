//! The bank of filter-trees: every layer-`k` tree of every source network,
//! uniform sampling without replacement, and the `.bft` container.
//!
//! `.bft` layout, little-endian: magic `BFT1`, `u32` version, `u32` header
//! length, JSON header (apex layer, sources, per-entry layer/block tables,
//! SHA-256 of the payload), then each block's weights and bias as `f32`,
//! entry by entry in header order.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{self, Reader, TensorEntry};
use crate::error::{Error, Result};
use crate::filtertree::{
    build_dep_graph, extract_with_graph, ConvBlock, FilterId, FilterTree, PrunedConv,
};
use crate::model::{LayerSpec, NetParams, NetSpec};
use crate::ops::ConvKernels;
use crate::tensor::Tensor;

pub const BFT_MAGIC: &str = "BFT1";
pub const BFT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub source_id: String,
    /// SHA-256 of the source network's spec.
    pub spec_digest: String,
    /// Label of the task the source was trained on.
    pub task: String,
}

/// A trained network offered to [`build_bank`].
#[derive(Debug, Clone, Copy)]
pub struct BankSource<'a> {
    pub spec: &'a NetSpec,
    pub params: &'a NetParams,
    pub source_id: &'a str,
    pub task: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    apex_layer: usize,
    sources: Vec<SourceInfo>,
    entries: Vec<FilterTree>,
}

impl FilterBank {
    pub fn apex_layer(&self) -> usize {
        self.apex_layer
    }

    pub fn sources(&self) -> &[SourceInfo] {
        &self.sources
    }

    pub fn entries(&self) -> &[FilterTree] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Selected trees in selection order.
    pub fn selected<'a>(&'a self, selection: &Selection) -> Result<Vec<&'a FilterTree>> {
        selection
            .indices
            .iter()
            .map(|&i| {
                self.entries.get(i).ok_or_else(|| {
                    Error::OutOfBounds(format!("entry {i} of {}", self.entries.len()))
                })
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let known: HashSet<&str> = self.sources.iter().map(|s| s.source_id.as_str()).collect();
        if known.len() != self.sources.len() {
            return Err(Error::Header("duplicate source ids".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.apex.layer != self.apex_layer {
                return Err(Error::Header(format!(
                    "entry apex layer {} in a layer-{} bank",
                    e.apex.layer, self.apex_layer
                )));
            }
            if !known.contains(e.source_id.as_str()) {
                return Err(Error::Header(format!(
                    "entry from unknown source {:?}",
                    e.source_id
                )));
            }
            if !seen.insert((e.source_id.as_str(), e.apex.index)) {
                return Err(Error::Header(format!(
                    "duplicate entry ({}, {})",
                    e.source_id, e.apex.index
                )));
            }
        }
        Ok(())
    }
}

/// Extracts every layer-`k` filter-tree of every source.
pub fn build_bank(sources: &[BankSource<'_>], k: usize) -> Result<FilterBank> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Missing("bank needs at least one source".into()))?;
    let mut ids = HashSet::new();
    let mut infos = Vec::with_capacity(sources.len());
    let mut entries = Vec::new();
    for src in sources {
        if !ids.insert(src.source_id) {
            return Err(Error::DuplicateSource(src.source_id.to_string()));
        }
        if src.spec.input_shape() != first.spec.input_shape() {
            return Err(Error::shape(format!(
                "source {:?} takes input {:?}, bank input is {:?}",
                src.source_id,
                src.spec.input_shape(),
                first.spec.input_shape()
            )));
        }
        if k == 0 || k > src.spec.conv_count() {
            return Err(Error::OutOfBounds(format!(
                "apex layer {k} but source {:?} has {} conv layers",
                src.source_id,
                src.spec.conv_count()
            )));
        }
        let graph = build_dep_graph(src.spec)?;
        for j in 0..src.spec.filters_in(k)? {
            entries.push(extract_with_graph(
                src.spec,
                src.params,
                &graph,
                src.source_id,
                FilterId::new(k, j),
            )?);
        }
        infos.push(SourceInfo {
            source_id: src.source_id.to_string(),
            spec_digest: src.spec.digest(),
            task: src.task.to_string(),
        });
    }
    Ok(FilterBank {
        apex_layer: k,
        sources: infos,
        entries,
    })
}

/// An ordered choice of distinct bank entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub seed: u64,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// First `n` positions of a seeded Fisher–Yates shuffle of `0..total`.
pub fn partial_fisher_yates(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::Capacity {
            requested: n,
            available: total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = rng.random_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// Uniformly samples `n` entries without replacement.
pub fn sample(bank: &FilterBank, n: usize, seed: u64) -> Result<Selection> {
    Ok(Selection {
        indices: partial_fisher_yates(bank.len(), n, seed)?,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct BlockMeta {
    pub in_start: usize,
    pub in_len: usize,
    pub out: usize,
}

/// Layout of a [`PrunedConv`] without its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct PrunedMeta {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub filters: Vec<usize>,
    pub post: Vec<LayerSpec>,
    pub blocks: Vec<BlockMeta>,
}

impl PrunedMeta {
    pub fn of(layer: &PrunedConv) -> Self {
        PrunedMeta {
            kh: layer.kh,
            kw: layer.kw,
            stride: layer.stride,
            pad: layer.pad,
            filters: layer.filters.clone(),
            post: layer.post.clone(),
            blocks: layer
                .blocks
                .iter()
                .map(|b| BlockMeta {
                    in_start: b.in_start,
                    in_len: b.in_len(),
                    out: b.kernels.out_channels(),
                })
                .collect(),
        }
    }

    pub fn table(&self, prefix: &str) -> Vec<TensorEntry> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    TensorEntry {
                        name: format!("{prefix}block{i}.weight"),
                        shape: vec![b.out, b.in_len, self.kh, self.kw],
                    },
                    TensorEntry {
                        name: format!("{prefix}block{i}.bias"),
                        shape: vec![b.out],
                    },
                ]
            })
            .collect()
    }

    pub fn rebuild(&self, tensors: &mut impl Iterator<Item = Tensor>) -> Result<PrunedConv> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let w = tensors
                    .next()
                    .ok_or_else(|| Error::ShapeTable("missing block weights".into()))?;
                let bias = tensors
                    .next()
                    .ok_or_else(|| Error::ShapeTable("missing block bias".into()))?;
                if w.shape() != [b.out, b.in_len, self.kh, self.kw] {
                    return Err(Error::ShapeTable(format!("block weights {:?}", w.shape())));
                }
                Ok(ConvBlock {
                    in_start: b.in_start,
                    kernels: ConvKernels::new(w, bias, 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let total: usize = blocks
            .iter()
            .map(|b: &ConvBlock| b.kernels.out_channels())
            .sum();
        if total != self.filters.len() {
            return Err(Error::ShapeTable(format!(
                "{total} block outputs for {} filters",
                self.filters.len()
            )));
        }
        Ok(PrunedConv {
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            filters: self.filters.clone(),
            blocks,
            post: self.post.clone(),
        })
    }
}

pub(crate) fn pruned_tensors(layer: &PrunedConv) -> Vec<&Tensor> {
    layer
        .blocks
        .iter()
        .flat_map(|b| [b.kernels.weights(), b.kernels.bias()])
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryMeta {
    source_id: String,
    apex: FilterId,
    input_shape: Vec<usize>,
    input_ops: Vec<LayerSpec>,
    layers: Vec<PrunedMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankHeader {
    apex_layer: usize,
    sources: Vec<SourceInfo>,
    entries: Vec<EntryMeta>,
    payload_sha256: String,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn save_bank(bank: &FilterBank, path: impl AsRef<Path>) -> Result<()> {
    let mut payload = Vec::new();
    for tree in &bank.entries {
        for layer in &tree.layers {
            for t in pruned_tensors(layer) {
                codec::push_f32s(&mut payload, t.data());
            }
        }
    }
    let header = BankHeader {
        apex_layer: bank.apex_layer,
        sources: bank.sources.clone(),
        entries: bank
            .entries
            .iter()
            .map(|t| EntryMeta {
                source_id: t.source_id.clone(),
                apex: t.apex,
                input_shape: t.input_shape.clone(),
                input_ops: t.input_ops.clone(),
                layers: t.layers.iter().map(PrunedMeta::of).collect(),
            })
            .collect(),
        payload_sha256: hex_digest(&payload),
    };
    let mut out = Vec::with_capacity(payload.len() + 4096);
    out.extend_from_slice(BFT_MAGIC.as_bytes());
    codec::push_u32(&mut out, BFT_VERSION);
    codec::push_json(&mut out, &header)?;
    out.extend_from_slice(&payload);
    codec::write_file(path.as_ref(), &out)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<FilterBank> {
    let path = path.as_ref();
    let bytes = codec::read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(BFT_MAGIC)?;
    let version = r.u32("version")?;
    if version != BFT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: BFT_VERSION,
        });
    }
    let header: BankHeader = r.json()?;
    let tables: Vec<Vec<Vec<TensorEntry>>> = header
        .entries
        .iter()
        .map(|e| e.layers.iter().map(|l| l.table("")).collect())
        .collect();
    let need: usize = tables
        .iter()
        .flatten()
        .flatten()
        .map(|t| t.shape.iter().product::<usize>() * 4)
        .sum();
    let payload = r.bytes(need, "payload")?;
    r.finish()?;
    if hex_digest(payload) != header.payload_sha256 {
        return Err(Error::DigestMismatch(path.to_path_buf()));
    }
    let mut pr = Reader::new(payload, path);
    let mut entries = Vec::with_capacity(header.entries.len());
    for (meta, layer_tables) in header.entries.into_iter().zip(tables) {
        let mut layers = Vec::with_capacity(meta.layers.len());
        for (lm, table) in meta.layers.iter().zip(layer_tables) {
            let tensors = table
                .iter()
                .map(|e| pr.tensor(e))
                .collect::<Result<Vec<_>>>()?;
            layers.push(lm.rebuild(&mut tensors.into_iter())?);
        }
        entries.push(FilterTree {
            source_id: meta.source_id,
            apex: meta.apex,
            input_shape: meta.input_shape,
            input_ops: meta.input_ops,
            layers,
        });
    }
    let bank = FilterBank {
        apex_layer: header.apex_layer,
        sources: header.sources,
        entries,
    };
    bank.validate()?;
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtertree::tree_forward;
    use crate::model::init_net;

    fn snet_sources(n: usize) -> (NetSpec, Vec<NetParams>, Vec<String>) {
        let spec = NetSpec::snet(2);
        let params = (0..n).map(|i| init_net(&spec, i as u64)).collect();
        let ids = (0..n).map(|i| format!("net{i}")).collect();
        (spec, params, ids)
    }

    fn sources<'a>(
        spec: &'a NetSpec,
        params: &'a [NetParams],
        ids: &'a [String],
    ) -> Vec<BankSource<'a>> {
        params
            .iter()
            .zip(ids)
            .map(|(p, id)| BankSource {
                spec,
                params: p,
                source_id: id,
                task: "t",
            })
            .collect()
    }

    #[test]
    fn single_source_layer_one() {
        let (spec, params, ids) = snet_sources(1);
        let bank = build_bank(&sources(&spec, &params, &ids), 1).unwrap();
        assert_eq!(bank.len(), 8);
        assert!(bank.entries().iter().all(|t| t.layers.len() == 1));
    }

    #[test]
    fn four_snets_at_layer_three() {
        let (spec, params, ids) = snet_sources(4);
        let bank = build_bank(&sources(&spec, &params, &ids), 3).unwrap();
        assert_eq!(bank.len(), 128);
        let mut pairs: Vec<_> = bank
            .entries()
            .iter()
            .map(|t| (t.source_id.clone(), t.apex.index))
            .collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 128);
        assert!(bank.entries().iter().all(|t| t.apex.layer == 3));
    }

    #[test]
    fn build_errors() {
        let (spec, params, ids) = snet_sources(2);
        let mut src = sources(&spec, &params, &ids);
        assert!(matches!(build_bank(&src, 6), Err(Error::OutOfBounds(_))));
        src[1].source_id = "net0";
        assert!(matches!(
            build_bank(&src, 3),
            Err(Error::DuplicateSource(_))
        ));
    }

    #[test]
    fn full_sample_is_permutation() {
        let mut s = partial_fisher_yates(10, 10, 3).unwrap();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(
            partial_fisher_yates(10, 4, 3).unwrap(),
            partial_fisher_yates(10, 4, 3).unwrap()
        );
        assert!(matches!(
            partial_fisher_yates(4, 5, 0),
            Err(Error::Capacity {
                requested: 5,
                available: 4
            })
        ));
    }

    #[test]
    fn single_draw_frequencies_within_three_sigma() {
        // Binomial(1000, 1/4): mean 250, sigma = sqrt(1000 * 0.25 * 0.75) ~ 13.69
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            counts[partial_fisher_yates(4, 1, seed).unwrap()[0]] += 1;
        }
        let sigma = (1000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 250.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn roundtrip_and_corruption() {
        let (spec, params, ids) = snet_sources(4);
        let bank = build_bank(&sources(&spec, &params, &ids), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bft");
        save_bank(&bank, &path).unwrap();
        let back = load_bank(&path).unwrap();
        assert_eq!(bank, back);
        let x = Tensor::from_fn(&[1, 28, 28], |i| (i % 17) as f32 / 17.0);
        for (a, b) in bank.entries().iter().zip(back.entries()).step_by(9) {
            assert!(tree_forward(a, &x)
                .unwrap()
                .bit_eq(&tree_forward(b, &x).unwrap()));
        }

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_bank(&path), Err(Error::Truncated { .. })));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_bank(&path), Err(Error::DigestMismatch(_))));

        let mut magic = bytes.clone();
        magic[3] = b'2';
        std::fs::write(&path, &magic).unwrap();
        assert!(matches!(load_bank(&path), Err(Error::BadMagic { .. })));

        let mut version = bytes;
        version[4] = 9;
        std::fs::write(&path, &version).unwrap();
        assert!(matches!(
            load_bank(&path),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
