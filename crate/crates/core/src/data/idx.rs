//! IDX (MNIST distribution) reader: big-endian magic and extents followed by
//! raw unsigned bytes.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes
        .get(header..header + len)
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: header + len,
            found: bytes.len(),
        })
}

/// Decodes in-memory IDX image and label files. The paths are only used
/// for error messages.
pub fn parse_idx(
    image_bytes: &[u8],
    image_path: &Path,
    label_bytes: &[u8],
    label_path: &Path,
) -> Result<Dataset> {
    check_magic(image_bytes, IMAGE_MAGIC, image_path)?;
    check_magic(label_bytes, LABEL_MAGIC, label_path)?;

    let n_images = read_u32(image_bytes, 4, image_path)? as usize;
    let rows = read_u32(image_bytes, 8, image_path)? as usize;
    let cols = read_u32(image_bytes, 12, image_path)? as usize;
    let n_labels = read_u32(label_bytes, 4, label_path)? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    if n_images == 0 || rows == 0 || cols == 0 {
        return Err(Error::Empty(format!("IDX file {}", image_path.display())));
    }

    let pixels = body(image_bytes, 16, n_images * rows * cols, image_path)?;
    let raw_labels = body(label_bytes, 8, n_labels, label_path)?;

    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0).max(1) + 1;
    let images = Tensor::new(vec![n_images, rows, cols, 1], data)?;
    Dataset::new(images, labels, classes)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    parse_idx(&ib, images, &lb, labels)
}
