//! Binary record loaders for the 32x32 RGB classification sets.
//!
//! 10-class layout: 3073-byte records, one label byte then 3072 pixel bytes
//! in channel-planar R, G, B order (1024 bytes per channel, row-major).
//! 100-class layout: 3074-byte records with a coarse then a fine label byte
//! ahead of the same 3072 pixels; the fine label is used. A converted
//! house-number set in the 10-class layout loads through the same parser.
//!
//! Pixels are scaled to [0, 1]; per-channel mean/std normalization is
//! computed on the training split and reused verbatim for eval splits.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::{Dataset, Normalization, Split};

pub const CIFAR10_RECORD: usize = 3073;
pub const CIFAR100_RECORD: usize = 3074;
const PIXELS: usize = 3 * 32 * 32;

struct RecordLayout {
    record_len: usize,
    label_offset: usize,
    class_count: usize,
    /// (offset-in-record, bound) pairs validated per record.
    label_bounds: &'static [(usize, usize)],
}

const LAYOUT_10: RecordLayout = RecordLayout {
    record_len: CIFAR10_RECORD,
    label_offset: 0,
    class_count: 10,
    label_bounds: &[(0, 10)],
};

const LAYOUT_100: RecordLayout = RecordLayout {
    record_len: CIFAR100_RECORD,
    label_offset: 1, // fine label
    class_count: 100,
    label_bounds: &[(0, 20), (1, 100)],
};

fn load_records(paths: &[PathBuf], layout: &RecordLayout) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % layout.record_len != 0 {
            return Err(Error::Parse {
                path: path.clone(),
                offset: (bytes.len() - bytes.len() % layout.record_len) as u64,
                what: format!(
                    "file length {} is not a positive multiple of the {}-byte record",
                    bytes.len(),
                    layout.record_len
                ),
            });
        }
        for (ri, record) in bytes.chunks_exact(layout.record_len).enumerate() {
            for &(off, bound) in layout.label_bounds {
                if record[off] as usize >= bound {
                    return Err(Error::Parse {
                        path: path.clone(),
                        offset: (ri * layout.record_len + off) as u64,
                        what: format!(
                            "label byte {} out of range [0, {bound}) in record {ri}",
                            record[off]
                        ),
                    });
                }
            }
            labels.push(record[layout.label_offset]);
            pixels.extend_from_slice(&record[layout.record_len - PIXELS..]);
        }
    }
    Ok((pixels, labels))
}

fn per_channel_stats(scaled: &[f32], n: usize) -> Normalization {
    let mut mean = vec![0.0f32; 3];
    let mut std = vec![0.0f32; 3];
    let plane = 32 * 32;
    for c in 0..3 {
        let mut sum = 0.0f64;
        for ni in 0..n {
            let base = (ni * 3 + c) * plane;
            for &v in &scaled[base..base + plane] {
                sum += v as f64;
            }
        }
        let m = sum / (n * plane) as f64;
        let mut sq = 0.0f64;
        for ni in 0..n {
            let base = (ni * 3 + c) * plane;
            for &v in &scaled[base..base + plane] {
                let d = v as f64 - m;
                sq += d * d;
            }
        }
        mean[c] = m as f32;
        std[c] = (sq / (n * plane) as f64).sqrt().max(1e-8) as f32;
    }
    Normalization { mean, std }
}

fn build_dataset(
    pixels: Vec<u8>,
    labels: Vec<u8>,
    class_count: usize,
    split: Split,
    norm: Option<Normalization>,
) -> Result<Dataset> {
    let n = labels.len();
    let mut scaled: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let normalization = match norm {
        Some(n) => n,
        None => per_channel_stats(&scaled, n),
    };
    let plane = 32 * 32;
    for ni in 0..n {
        for c in 0..3 {
            let base = (ni * 3 + c) * plane;
            let (m, s) = (normalization.mean[c], normalization.std[c]);
            for v in &mut scaled[base..base + plane] {
                *v = (*v - m) / s;
            }
        }
    }
    let images = Tensor4::from_vec((n, 3, 32, 32), scaled)?;
    Dataset::new(images, labels, class_count, split, normalization)
}

/// Load 10-class binary batches. With `norm = None` the per-channel
/// constants are computed from these files (training split); pass the
/// training normalization when loading eval splits.
pub fn load_cifar10_bin(
    paths: &[PathBuf],
    split: Split,
    norm: Option<Normalization>,
) -> Result<Dataset> {
    let (pixels, labels) = load_records(paths, &LAYOUT_10)?;
    build_dataset(pixels, labels, LAYOUT_10.class_count, split, norm)
}

/// Load 100-class binary batches (coarse+fine label header; fine used).
pub fn load_cifar100_bin(
    paths: &[PathBuf],
    split: Split,
    norm: Option<Normalization>,
) -> Result<Dataset> {
    let (pixels, labels) = load_records(paths, &LAYOUT_100)?;
    build_dataset(pixels, labels, LAYOUT_100.class_count, split, norm)
}

/// Converted house-number data in the 10-class record layout (see the
/// conversion script shipped with the repository).
pub fn load_svhn_bin(
    paths: &[PathBuf],
    split: Split,
    norm: Option<Normalization>,
) -> Result<Dataset> {
    load_cifar10_bin(paths, split, norm)
}

/// Re-encode one sample to its source record bytes by inverting the
/// normalization and the 1/255 scaling.
pub fn encode_cifar10_record(ds: &Dataset, index: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(CIFAR10_RECORD);
    out.push(ds.labels[index]);
    for c in 0..3 {
        let (m, s) = (ds.normalization.mean[c], ds.normalization.std[c]);
        for &v in ds.images.plane(index, c) {
            let p = (v * s + m) * 255.0;
            out.push(p.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Write records in the 10-class layout (tests and the synthetic corpus).
pub fn write_cifar10_records(path: &Path, records: &[(u8, [u8; PIXELS])]) -> Result<()> {
    let mut bytes = Vec::with_capacity(records.len() * CIFAR10_RECORD);
    for (label, pixels) in records {
        bytes.push(*label);
        bytes.extend_from_slice(pixels);
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
