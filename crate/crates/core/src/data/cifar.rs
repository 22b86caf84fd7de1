//! CIFAR binary format: fixed-size records of label byte(s) followed by
//! 3072 pixel bytes (3×32×32, channel-major).

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const PIXELS: usize = 3 * 32 * 32;

/// Parses records with `label_bytes` leading label bytes; the last one is
/// the class (CIFAR-100's fine label).
pub fn parse_records(bytes: &[u8], label_bytes: usize) -> Result<(Vec<f32>, Vec<usize>)> {
    let rec = label_bytes + PIXELS;
    if bytes.len() % rec != 0 {
        return Err(Error::Data(format!(
            "CIFAR file length {} is not a multiple of the {}-byte record; truncated at offset {}",
            bytes.len(),
            rec,
            bytes.len() - bytes.len() % rec
        )));
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for r in bytes.chunks_exact(rec) {
        labels.push(r[label_bytes - 1] as usize);
        pixels.extend(r[label_bytes..].iter().map(|&p| f32::from(p) / 255.0));
    }
    Ok((pixels, labels))
}

fn load_files(dir: &Path, files: &[String], label_bytes: usize, classes: usize, split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = fs::read(&path).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
        let (p, l) = parse_records(&bytes, label_bytes)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    Dataset::new(Tensor::new(&[n, 3, 32, 32], pixels)?, labels, classes, split)
}

/// `data_batch_{1..5}.bin` and `test_batch.bin`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train: Vec<String> = (1..=5).map(|i| format!("data_batch_{}.bin", i)).collect();
    Ok((
        load_files(dir, &train, 1, 10, Split::Train)?,
        load_files(dir, &["test_batch.bin".to_string()], 1, 10, Split::Test)?,
    ))
}

/// `train.bin` and `test.bin` with coarse and fine label bytes.
pub fn load_cifar100(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((
        load_files(dir, &["train.bin".to_string()], 2, 100, Split::Train)?,
        load_files(dir, &["test.bin".to_string()], 2, 100, Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_parsing() {
        let mut bytes = vec![7u8];
        bytes.extend((0..PIXELS).map(|i| (i % 256) as u8));
        let (px, labels) = parse_records(&bytes, 1).unwrap();
        assert_eq!(labels, vec![7]);
        assert_eq!(px[255], 1.0);
        assert!(parse_records(&bytes[..100], 1).is_err());
    }
}
