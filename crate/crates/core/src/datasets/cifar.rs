//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! channel-planar pixel bytes (R, G, B planes of 32×32).

use super::ImageSet;
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = SIDE * SIDE * CHANNELS;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;

pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<(ImageSet, Vec<u8>)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format(format!(
            "length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let count = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * IMAGE_BYTES);
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        if rec[0] > 9 {
            return Err(Error::Format(format!("label {} outside 0..=9", rec[0])));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    let set = ImageSet {
        count,
        height: SIDE,
        width: SIDE,
        channels: CHANNELS,
        pixels,
    };
    Ok((set, labels))
}

/// Concatenates several batch files in order.
pub fn parse_cifar10_batches<'a>(batches: impl IntoIterator<Item = &'a [u8]>) -> Result<(ImageSet, Vec<u8>)> {
    let mut all = ImageSet {
        count: 0,
        height: SIDE,
        width: SIDE,
        channels: CHANNELS,
        pixels: Vec::new(),
    };
    let mut labels = Vec::new();
    for bytes in batches {
        let (set, l) = parse_cifar10_bin(bytes)?;
        all.count += set.count;
        all.pixels.extend(set.pixels);
        labels.extend(l);
    }
    Ok((all, labels))
}

pub fn encode_cifar10_bin(set: &ImageSet, labels: &[u8]) -> Result<Vec<u8>> {
    if set.height * set.width * set.channels != IMAGE_BYTES || labels.len() != set.count {
        return Err(Error::Shape("not a CIFAR-10 shaped image set".into()));
    }
    let mut out = Vec::with_capacity(set.count * RECORD_BYTES);
    for (i, &l) in labels.iter().enumerate() {
        out.push(l);
        out.extend_from_slice(set.image(i));
    }
    Ok(out)
}
