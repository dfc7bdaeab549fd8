//! IDX image and label files: big-endian `u32` magic and dimensions,
//! then raw `u8` values.

use std::path::Path;

use crate::codec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard file names inside a dataset directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Decoded images (`1 x H x W`, values in `[0, 1]`) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub images: Vec<Tensor>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", at + 4),
        })
}

fn check_magic(bytes: &[u8], magic: u32, path: &Path) -> Result<()> {
    if be_u32(bytes, 0, path)? != magic {
        let expected = if magic == IDX_IMAGES_MAGIC {
            "IDX images 0x00000803"
        } else {
            "IDX labels 0x00000801"
        };
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let have = bytes.len() - offset;
    if have < len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{len} data bytes declared, {have} present"),
        });
    }
    Ok(&bytes[offset..offset + len])
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = codec::read_file(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    Ok(body(&bytes, 8, n, path)?.to_vec())
}

/// Raw pixels with `(count, rows, cols)`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(Vec<u8>, usize, usize, usize)> {
    let path = path.as_ref();
    let bytes = codec::read_file(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Dataset(format!(
            "{}: zero image dimension",
            path.display()
        )));
    }
    Ok((
        body(&bytes, 16, n * rows * cols, path)?.to_vec(),
        n,
        rows,
        cols,
    ))
}

pub fn load_idx_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledImages> {
    let (pixels, n, rows, cols) = read_idx_images(images_path.as_ref())?;
    let labels = read_idx_labels(labels_path.as_ref())?;
    if labels.len() != n {
        return Err(Error::Dataset(format!(
            "{} holds {n} images but {} holds {} labels",
            images_path.as_ref().display(),
            labels_path.as_ref().display(),
            labels.len()
        )));
    }
    let plane = rows * cols;
    let images = (0..n)
        .map(|i| {
            let data = pixels[i * plane..(i + 1) * plane]
                .iter()
                .map(|&p| p as f32 / 255.0)
                .collect();
            Tensor::new(vec![1, rows, cols], data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledImages { images, labels })
}

/// `(train, test)` from a directory with the standard file names.
pub fn load_idx_dir(dir: impl AsRef<Path>) -> Result<(LabeledImages, LabeledImages)> {
    let dir = dir.as_ref();
    Ok((
        load_idx_dataset(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?,
        load_idx_dataset(dir.join(TEST_IMAGES), dir.join(TEST_LABELS))?,
    ))
}

pub fn write_idx_images(
    path: impl AsRef<Path>,
    pixels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows == 0 || cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::InvalidArgument(format!(
            "{} pixels do not tile {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        (pixels.len() / (rows * cols)) as u32,
        rows as u32,
        cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    codec::write_file(path.as_ref(), &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    codec::write_file(path.as_ref(), &out)
}
