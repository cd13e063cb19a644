//! IDX file format (the MNIST distribution format).
//!
//! Layout: big-endian `u32` magic (`0x00000803` for 3-D unsigned-byte image
//! arrays, `0x00000801` for 1-D label arrays), one big-endian `u32` per
//! dimension, then the unsigned-byte payload in row-major order. Gzip-compressed
//! files are detected by their magic bytes and decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw contents of an IDX unsigned-byte file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, bytes.len(), "file ends inside the header"))
}

/// Parses IDX bytes whose magic must equal `expected_magic`.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected_magic {
        return Err(format_err(
            path,
            0,
            format!("magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(be_u32(bytes, 4 + 4 * d, path)? as usize);
    }
    let header = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < len {
        return Err(format_err(
            path,
            bytes.len(),
            format!("payload truncated: {available} of {len} bytes present"),
        ));
    }
    if available > len {
        return Err(format_err(
            path,
            header + len,
            format!("{} trailing bytes after payload", available - len),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let magic = 0x0000_0800 | array.dims.len() as u32;
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Reads an image file and its label file into a dataset of `[n, 1, rows, cols]`
/// pixels scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx(&read_bytes(images_path)?, IMAGES_MAGIC, images_path)?;
    let labels = parse_idx(&read_bytes(labels_path)?, LABELS_MAGIC, labels_path)?;
    let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(format_err(
            labels_path,
            4,
            format!("{} labels for {n} images", labels.dims[0]),
        ));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(format_err(images_path, 4, "empty image array"));
    }
    let pixels: Vec<f64> = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| usize::from(b)).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(
        Tensor::new(vec![n, 1, rows, cols], pixels)?,
        labels,
        classes.max(10),
        Split::Train,
    )
}

/// Writes a single-channel dataset as an IDX image/label pair. Pixels are
/// stored as `round(255 * v)`.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let &[c, rows, cols] = dataset.sample_shape() else {
        unreachable!("datasets are always 4-D")
    };
    if c != 1 {
        return Err(Error::Dataset(format!(
            "IDX images are single-channel, got {c} channels"
        )));
    }
    if let Some(&l) = dataset.labels().iter().find(|&&l| l > 255) {
        return Err(Error::Dataset(format!("label {l} does not fit in a byte")));
    }
    let images = IdxArray {
        dims: vec![dataset.len(), rows, cols],
        data: dataset
            .images()
            .data()
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect(),
    };
    let labels = IdxArray {
        dims: vec![dataset.len()],
        data: dataset.labels().iter().map(|&l| l as u8).collect(),
    };
    write_file(images_path, &encode_idx(&images))?;
    write_file(labels_path, &encode_idx(&labels))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "MNIST file not found (plain or .gz)",
        ),
    ))
}

/// Loads the standard MNIST file pair from `dir` (`train-*` or `t10k-*`).
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Test => "t10k",
        Split::Train | Split::Validation => "train",
    };
    let images = find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    Ok(load_idx(&images, &labels)?.with_split(split))
}
