//! IDX (MNIST-style) files: big-endian `u32` magic, big-endian `u32` counts,
//! then raw `u8` payload. Images are scaled to `[0, 1]`.

use std::path::Path;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, offset, format!("truncated header: missing {what}")))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, usize, &'a [u8])> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path, "image count")? as usize;
    let rows = be_u32(bytes, 8, path, "row count")? as usize;
    let cols = be_u32(bytes, 12, path, "column count")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(format_err(path, 4, "image file declares no pixels"));
    }
    let need = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != need {
        return Err(format_err(
            path,
            16 + payload.len().min(need),
            format!("expected {need} pixel bytes, found {}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload))
}

pub fn parse_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(format_err(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path, "label count")? as usize;
    if n == 0 {
        return Err(format_err(path, 4, "label file declares no labels"));
    }
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(format_err(
            path,
            8 + payload.len().min(n),
            format!("expected {n} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload)
}

/// Loads an image/label IDX pair into a `[N, rows, cols]` dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;
    let (n, rows, cols, pixels) = parse_images(&image_bytes, images_path)?;
    let labels = parse_labels(&label_bytes, labels_path)?;
    if labels.len() != n {
        return Err(format_err(
            labels_path,
            4,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let features = Tensor::new(
        vec![n, rows, cols],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    Dataset::new(features, labels, num_classes)
}

/// Encodes images (`[N, rows, cols]` bytes) and labels in IDX form.
pub fn encode_idx(rows: usize, cols: usize, images: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(images);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
