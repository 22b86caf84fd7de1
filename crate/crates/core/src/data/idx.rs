//! IDX container (MNIST family): big-endian header, `u8` payload.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Data(format!("truncated IDX header: {} at offset {} missing", what, offset)))
}

fn check_magic(bytes: &[u8], expect: u32) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != expect {
        return Err(Error::Data(format!(
            "bad IDX magic at offset 0: expected {:#010x}, found {:#010x}",
            expect, magic
        )));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, count: usize) -> Result<&'a [u8]> {
    bytes.get(offset..offset + count).ok_or_else(|| {
        Error::Data(format!(
            "truncated IDX payload: {} bytes expected from offset {}, file has {}",
            count,
            offset,
            bytes.len()
        ))
    })
}

/// Parses an image file into `(n, h, w, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4, "image count")? as usize;
    let h = be_u32(bytes, 8, "row count")? as usize;
    let w = be_u32(bytes, 12, "column count")? as usize;
    Ok((n, h, w, payload(bytes, 16, n * h * w)?.to_vec()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4, "label count")? as usize;
    Ok(payload(bytes, 8, n)?.to_vec())
}

pub fn encode_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * h * w, "pixel count");
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]`; the class
/// count is one past the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (n, h, w, pixels) = parse_images(&read(images.as_ref())?)?;
    let labels = parse_labels(&read(labels.as_ref())?)?;
    if labels.len() != n {
        return Err(Error::Data(format!("{} images but {} labels", n, labels.len())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let images = Tensor::new(&[n, 1, h, w], pixels.iter().map(|&p| f32::from(p) / 255.0).collect())?;
    Dataset::new(images, labels.iter().map(|&l| l as usize).collect(), classes, split)
}

fn find(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    stems
        .iter()
        .map(|s| dir.join(s))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Data(format!("none of {:?} found in {}", stems, dir.display())))
}

/// Loads the MNIST-family train and test splits from `dir`, accepting
/// both `train-images-idx3-ubyte` and `train-images.idx3-ubyte` spellings.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let split = |prefix: &str, split: Split| -> Result<Dataset> {
        let images = find(dir, &[&format!("{}-images-idx3-ubyte", prefix), &format!("{}-images.idx3-ubyte", prefix)])?;
        let labels = find(dir, &[&format!("{}-labels-idx1-ubyte", prefix), &format!("{}-labels.idx1-ubyte", prefix)])?;
        load_idx(images, labels, split)
    };
    let mut train = split("train", Split::Train)?;
    let mut test = split("t10k", Split::Test)?;
    let classes = train.classes.max(test.classes);
    train.classes = classes;
    test.classes = classes;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let bytes = encode_images(2, 2, 3, &[0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255]);
        let (n, h, w, px) = parse_images(&bytes).unwrap();
        assert_eq!((n, h, w), (2, 2, 3));
        assert_eq!(px[11], 255);
        assert_eq!(parse_labels(&encode_labels(&[3, 1])).unwrap(), vec![3, 1]);
    }

    #[test]
    fn bad_magic_names_offset() {
        let mut bytes = encode_labels(&[1]);
        bytes[3] = 0x03;
        let err = parse_labels(&bytes).unwrap_err().to_string();
        assert!(err.contains("offset 0"), "{}", err);
        let bytes = encode_images(1, 2, 2, &[1, 2, 3, 4]);
        assert!(parse_images(&bytes[..18]).unwrap_err().to_string().contains("offset 16"));
    }
}
