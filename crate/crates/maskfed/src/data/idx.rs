//! IDX file parsing (the MNIST on-disk format).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an image/label IDX pair into a dataset.
///
/// Images: big-endian magic `0x00000803`, then `N, rows, cols` and
/// `N * rows * cols` u8 pixels, scaled here by 1/255. Labels: magic
/// `0x00000801`, then `N` u8 class indices. The two counts must agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = open(images_path)?;
    let magic = read_u32_be(&mut images, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let image_count = read_u32_be(&mut images, images_path)? as usize;
    let rows = read_u32_be(&mut images, images_path)? as usize;
    let cols = read_u32_be(&mut images, images_path)? as usize;
    let mut pixels = vec![0u8; image_count * rows * cols];
    images
        .read_exact(&mut pixels)
        .map_err(|e| truncated(images_path, e))?;

    let mut labels_file = open(labels_path)?;
    let magic = read_u32_be(&mut labels_file, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let label_count = read_u32_be(&mut labels_file, labels_path)? as usize;
    if label_count != image_count {
        return Err(Error::Data(format!(
            "{image_count} images but {label_count} labels"
        )));
    }
    let mut raw_labels = vec![0u8; label_count];
    labels_file
        .read_exact(&mut raw_labels)
        .map_err(|e| truncated(labels_path, e))?;

    let features: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(features, vec![1, rows, cols], labels, class_count)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(Error::io(path.display().to_string()))
}

fn read_u32_be(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|e| truncated(path, e))?;
    Ok(u32::from_be_bytes(buf))
}

fn truncated(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Data(format!("{}: truncated file", path.display()))
    } else {
        Error::io(path.display().to_string())(e)
    }
}
