//! IDX (MNIST-style) image and label files, optionally gzip-compressed.

use std::borrow::Cow;
use std::io::Read;

use flate2::read::MultiGzDecoder;

use super::ImageSet;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decompresses when the buffer starts with the gzip magic bytes.
pub fn decompress_if_gzip(bytes: &[u8]) -> Result<Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(Cow::Owned(out))
    } else {
        Ok(Cow::Borrowed(bytes))
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::Length {
            expected,
            found: bytes.len(),
        }),
        std::cmp::Ordering::Greater => Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        ))),
        std::cmp::Ordering::Equal => Ok(&bytes[header..]),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let bytes = decompress_if_gzip(bytes)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let height = be_u32(&bytes, 8)? as usize;
    let width = be_u32(&bytes, 12)? as usize;
    let pixels = payload(&bytes, 16, count * height * width)?.to_vec();
    Ok(ImageSet {
        count,
        height,
        width,
        channels: 1,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = decompress_if_gzip(bytes)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let labels = payload(&bytes, 8, count)?.to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

pub fn encode_idx_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.pixels.len());
    for v in [IMAGES_MAGIC, set.count as u32, set.height as u32, set.width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&set.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
