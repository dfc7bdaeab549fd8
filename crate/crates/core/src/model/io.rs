//! The `.cnn` network file: magic `CNN1`, a `u32`-length-prefixed JSON
//! header (spec, shape table, seed), then every tensor as little-endian
//! `f32` in shape-table order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{expected_shapes, LayerParams, NetParams};
use super::spec::{LayerSpec, NetSpec};
use crate::codec::{self, Reader, TensorEntry};
use crate::error::{Error, Result};
use crate::ops::ConvKernels;
use crate::tensor::Tensor;

pub const CNN_MAGIC: &str = "CNN1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnHeader {
    /// `"net"` for a plain network, `"target"` for an assembled transfer net.
    pub kind: String,
    pub spec: NetSpec,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<serde_json::Value>,
}

pub(crate) fn write_cnn(path: &Path, header: &CnnHeader, tensors: &[&Tensor]) -> Result<()> {
    debug_assert_eq!(header.tensors.len(), tensors.len());
    let mut out = Vec::new();
    out.extend_from_slice(CNN_MAGIC.as_bytes());
    codec::push_json(&mut out, header)?;
    for t in tensors {
        codec::push_f32s(&mut out, t.data());
    }
    codec::write_file(path, &out)
}

pub(crate) fn read_cnn(path: &Path) -> Result<(CnnHeader, Vec<Tensor>)> {
    let bytes = codec::read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(CNN_MAGIC)?;
    let header: CnnHeader = r.json()?;
    let tensors = header
        .tensors
        .iter()
        .map(|e| r.tensor(e))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((header, tensors))
}

/// Shape table and tensor list for a network's parameters, in layer order.
pub(crate) fn param_table<'a>(
    spec: &NetSpec,
    params: &'a NetParams,
    prefix: &str,
) -> (Vec<TensorEntry>, Vec<&'a Tensor>) {
    let mut entries = Vec::new();
    let mut tensors = Vec::new();
    for (i, p) in params.layers().iter().enumerate() {
        for (t, suffix) in p.tensors().into_iter().zip(["weight", "bias"]) {
            entries.push(TensorEntry {
                name: format!("{prefix}layer{i}.{suffix}"),
                shape: t.shape().to_vec(),
            });
            tensors.push(t);
        }
    }
    debug_assert_eq!(params.layers().len(), spec.layers().len());
    (entries, tensors)
}

/// Rebuilds parameters from a payload, checking it against the spec.
pub(crate) fn params_from_table(
    spec: &NetSpec,
    entries: &[TensorEntry],
    tensors: Vec<Tensor>,
    seed: u64,
) -> Result<NetParams> {
    let mut expected = Vec::new();
    for i in 0..spec.layers().len() {
        if let Some((w, b)) = expected_shapes(spec, i) {
            expected.push(w);
            expected.push(b);
        }
    }
    let got: Vec<&Vec<usize>> = entries.iter().map(|e| &e.shape).collect();
    if got.len() != expected.len() || got.iter().zip(&expected).any(|(g, e)| *g != e) {
        return Err(Error::ShapeTable(format!(
            "shape table {got:?} does not match spec shapes {expected:?}"
        )));
    }
    let mut it = tensors.into_iter();
    let layers = spec
        .layers()
        .iter()
        .map(|layer| match layer {
            LayerSpec::Conv { groups, .. } => {
                let w = it.next().unwrap();
                let b = it.next().unwrap();
                ConvKernels::new(w, b, *groups).map(LayerParams::Conv)
            }
            LayerSpec::Dense { .. } => {
                let weights = it.next().unwrap();
                let bias = it.next().unwrap();
                Ok(LayerParams::Dense { weights, bias })
            }
            _ => Ok(LayerParams::None),
        })
        .collect::<Result<Vec<_>>>()?;
    NetParams::from_layers(spec, layers, seed)
}

pub fn save_net(spec: &NetSpec, params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    params.check(spec)?;
    let (tensors_meta, tensors) = param_table(spec, params, "");
    let header = CnnHeader {
        kind: "net".into(),
        spec: spec.clone(),
        seed: params.seed(),
        tensors: tensors_meta,
        target: None,
    };
    write_cnn(path.as_ref(), &header, &tensors)
}

pub fn load_net(path: impl AsRef<Path>) -> Result<(NetSpec, NetParams)> {
    let (header, tensors) = read_cnn(path.as_ref())?;
    if header.kind != "net" {
        return Err(Error::Header(format!(
            "{} holds a {:?} network, not a plain one",
            path.as_ref().display(),
            header.kind
        )));
    }
    let params = params_from_table(&header.spec, &header.tensors, tensors, header.seed)?;
    Ok((header.spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_net;

    #[test]
    fn roundtrip_fresh_net() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cnn");
        let spec = NetSpec::snet(2);
        let params = init_net(&spec, 42);
        save_net(&spec, &params, &path).unwrap();
        let (s2, p2) = load_net(&path).unwrap();
        assert_eq!(spec, s2);
        assert!(params.bit_eq(&p2));
        assert_eq!(p2.seed(), 42);
    }

    #[test]
    fn corrupted_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cnn");
        let spec = NetSpec::snet(2);
        save_net(&spec, &init_net(&spec, 1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        let e = load_net(&path).unwrap_err();
        assert!(matches!(e, Error::BadMagic { .. }));

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let t = load_net(&path).unwrap_err();
        assert!(matches!(t, Error::Truncated { .. }));
        assert_ne!(e.code(), t.code());
    }

    #[test]
    fn shape_table_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cnn");
        let spec = NetSpec::snet(2);
        let params = init_net(&spec, 1);
        let (mut meta, tensors) = param_table(&spec, &params, "");
        meta.swap(0, 2);
        let tensors: Vec<&Tensor> = {
            let mut t = tensors;
            t.swap(0, 2);
            t
        };
        let header = CnnHeader {
            kind: "net".into(),
            spec,
            seed: 1,
            tensors: meta,
            target: None,
        };
        write_cnn(&path, &header, &tensors).unwrap();
        assert!(matches!(load_net(&path), Err(Error::ShapeTable(_))));
    }
}
