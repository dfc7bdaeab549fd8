//! Little-endian byte plumbing shared by the `.cnn` and `.bft` formats.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One row of a payload shape table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// `u32` length followed by the JSON bytes.
pub(crate) fn push_json<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    let json = serde_json::to_vec(value)?;
    let len =
        u32::try_from(json.len()).map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;
    push_u32(out, len);
    out.extend_from_slice(&json);
    Ok(())
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Self {
        Reader {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                detail: format!(
                    "{what}: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: &'static str) -> Result<()> {
        let got = self
            .take(magic.len(), "magic")
            .map_err(|_| Error::BadMagic {
                path: self.path.clone(),
                expected: magic,
            })?;
        if got != magic.as_bytes() {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected: magic,
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let len = self.u32("header length")? as usize;
        let bytes = self.take(len, "header")?;
        serde_json::from_slice(bytes).map_err(|e| Error::Header(e.to_string()))
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n, what)
    }

    pub fn tensor(&mut self, entry: &TensorEntry) -> Result<Tensor> {
        let n: usize = entry.shape.iter().product();
        let bytes = self.take(n * 4, &entry.name)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::ShapeTable(format!("{}: {e}", entry.name)))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::ShapeTable(format!(
                "{} trailing bytes after payload in {}",
                self.buf.len() - self.pos,
                self.path.display()
            )));
        }
        Ok(())
    }
}
