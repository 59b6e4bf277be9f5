//! Reader for the big-endian IDX format used by MNIST-style image sets.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| Error::Idx("truncated header".into()))
}

/// Parses an unsigned-byte image file; returns `(count, rows·cols, pixels)`
/// with pixels scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Idx(format!("image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let dim = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != count * dim {
        return Err(Error::Idx(format!("expected {} pixel bytes, found {}", count * dim, body.len())));
    }
    Ok((count, dim, body.iter().map(|&p| f64::from(p) / 255.0).collect()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Idx(format!("label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Idx(format!("expected {count} labels, found {}", body.len())));
    }
    Ok(body.iter().map(|&l| usize::from(l)).collect())
}

/// Loads an image/label file pair as a classification dataset.
pub fn load(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset> {
    let (count, dim, pixels) = parse_images(&fs::read(images)?)?;
    let labels = parse_labels(&fs::read(labels)?)?;
    if labels.len() != count {
        return Err(Error::Idx(format!("{count} images but {} labels", labels.len())));
    }
    Dataset::classification(pixels, dim, labels, num_classes)
}

/// Loads the standard training and test files from a directory.
pub fn load_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"), 10)?;
    let test = load(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"), 10)?;
    Ok((train, test))
}
