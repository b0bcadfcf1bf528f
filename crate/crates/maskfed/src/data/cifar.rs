//! CIFAR binary-format loaders (3073-byte records: 1 label byte + 3072
//! pixel bytes; CIFAR-100 uses 2 label bytes).

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::{Error, Result};

const PIXELS: usize = 3 * 32 * 32;

/// Load one or more CIFAR-10 batch files (`data_batch_*.bin`) into a single
/// dataset of `[3, 32, 32]` examples.
pub fn load_cifar10(paths: &[PathBuf]) -> Result<Dataset> {
    load_cifar(paths, 1, 10)
}

/// Load CIFAR-100 batch files; the fine label (second label byte) is used.
pub fn load_cifar100(paths: &[PathBuf]) -> Result<Dataset> {
    load_cifar(paths, 2, 100)
}

fn load_cifar(paths: &[PathBuf], label_bytes: usize, class_count: usize) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Data("no CIFAR files given".into()));
    }
    let record = label_bytes + PIXELS;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_all(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Data(format!(
                "{}: {} bytes is not a whole number of {record}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            // The last label byte is the (fine) class.
            let label = rec[label_bytes - 1] as usize;
            if label >= class_count {
                return Err(Error::Data(format!(
                    "{}: label {label} out of range for {class_count} classes",
                    path.display()
                )));
            }
            labels.push(label);
            features.extend(rec[label_bytes..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Dataset::new(features, vec![3, 32, 32], labels, class_count)
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(Error::io(path.display().to_string()))?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_crafted_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut f = File::create(&path).unwrap();
        for label in [3u8, 7] {
            f.write_all(&[label]).unwrap();
            f.write_all(&vec![label * 10; PIXELS]).unwrap();
        }
        drop(f);
        let ds = load_cifar10(&[path]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_shape(), &[3, 32, 32]);
        assert_eq!(ds.label(0), 3);
        assert_eq!(ds.label(1), 7);
        assert_eq!(ds.feature(0)[0], 30.0 / 255.0);
    }

    #[test]
    fn partial_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; 3073 + 10]).unwrap();
        assert!(load_cifar10(&[path]).is_err());
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c100.bin");
        let mut f = File::create(&path).unwrap();
        f.write_all(&[5u8, 42]).unwrap(); // coarse 5, fine 42
        f.write_all(&vec![0u8; PIXELS]).unwrap();
        drop(f);
        let ds = load_cifar100(&[path]).unwrap();
        assert_eq!(ds.label(0), 42);
        assert_eq!(ds.class_count(), 100);
    }
}
