//! Deterministic synthetic image corpus: ten geometric glyph classes with
//! random shifts, amplitude jitter and pixel noise, written in the IDX byte
//! format. It exists so the full pipeline — loader, training protocol,
//! evaluation — can run end to end on a machine with no datasets installed.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

use super::mnist::{write_idx_images, write_idx_labels};
use super::{Dataset, Normalization, Split};

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    /// Std of the additive Gaussian pixel noise.
    pub noise: f64,
    /// Max absolute shift in pixels, per axis.
    pub shift: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            h: 28,
            w: 28,
            noise: 0.12,
            shift: 2,
        }
    }
}

/// Glyph intensity at (y, x) for a class: rings, bars, diagonals, crosses,
/// disks and frames — mutually distinguishable under small shifts.
fn glyph(class: usize, y: i64, x: i64, h: i64, w: i64) -> f64 {
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let dy = y as f64 - cy;
    let dx = x as f64 - cx;
    let r = (dy * dy + dx * dx).sqrt();
    let band = |v: f64, lo: f64, hi: f64| -> bool { v >= lo && v <= hi };
    let on = match class {
        0 => band(r, cx * 0.45, cx * 0.72),              // ring
        1 => dx.abs() <= 1.6,                            // vertical bar
        2 => dy.abs() <= 1.6,                            // horizontal bar
        3 => (dy - dx).abs() <= 2.0,                     // main diagonal
        4 => (dy + dx).abs() <= 2.0,                     // anti-diagonal
        5 => dx.abs() <= 1.6 || dy.abs() <= 1.6,         // cross
        6 => r <= cx * 0.42,                             // disk
        7 => band(dy.abs(), cy * 0.35, cy * 0.62),       // two horizontal bands
        8 => (dy - dx).abs() <= 2.0 || (dy + dx).abs() <= 2.0, // X
        _ => band(dy.abs().max(dx.abs()), cx * 0.45, cx * 0.72), // square frame
    };
    if on {
        0.9
    } else {
        0.0
    }
}

/// Raw u8 pixels and labels for `n` samples, deterministic in the seed.
pub fn synth_images(n: usize, spec: SynthSpec, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = SplitMix64::new(seed);
    let (h, w) = (spec.h as i64, spec.w as i64);
    let mut pixels = Vec::with_capacity(n * spec.h * spec.w);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.next_below(spec.classes as u64) as usize;
        let sy = rng.next_below((2 * spec.shift + 1) as u64) as i64 - spec.shift;
        let sx = rng.next_below((2 * spec.shift + 1) as u64) as i64 - spec.shift;
        let amp = 0.7 + 0.3 * rng.next_f64();
        for y in 0..h {
            for x in 0..w {
                let v = glyph(class, y - sy, x - sx, h, w) * amp
                    + rng.next_gaussian() * spec.noise;
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        labels.push(class as u8);
    }
    (pixels, labels)
}

/// In-memory dataset (pixels scaled to [0, 1], identity normalization).
pub fn synth_dataset(n: usize, seed: u64, split: Split) -> Result<Dataset> {
    let spec = SynthSpec::default();
    let (pixels, labels) = synth_images(n, spec, seed);
    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor4::from_vec((n, 1, spec.h, spec.w), data)?;
    Dataset::new(
        images,
        labels,
        spec.classes,
        split,
        Normalization::identity(1),
    )
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Write a train/test corpus in the IDX byte format so the real loader path
/// is exercised.
pub fn write_idx_corpus(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<SynthCorpus> {
    let spec = SynthSpec::default();
    let (train_px, train_lb) = synth_images(n_train, spec, seed);
    let (test_px, test_lb) = synth_images(n_test, spec, seed ^ 0x5EED_5EED);
    let corpus = SynthCorpus {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
    };
    write_idx_images(&corpus.train_images, n_train, spec.h, spec.w, &train_px)?;
    write_idx_labels(&corpus.train_labels, &train_lb)?;
    write_idx_images(&corpus.test_images, n_test, spec.h, spec.w, &test_px)?;
    write_idx_labels(&corpus.test_labels, &test_lb)?;
    Ok(corpus)
}
