//! Datasets and deterministic batch streams.
//!
//! Loaders parse the on-disk formats bit-exactly (byte layouts documented in
//! the README), scale pixels to [0, 1], and optionally apply a per-channel
//! mean/std normalization derived from the training split. Datasets are
//! immutable after load; batch iterators draw a seeded permutation per epoch.

pub mod cifar;
pub mod mnist;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// The affine transform applied after the 1/255 scaling:
/// x_norm = (x - mean[c]) / std[c]. Invertible given the stored constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "scale 1/255 then per-channel (x - mean)/std, mean={:?} std={:?}",
            self.mean, self.std
        )
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor4<f32>,
    pub labels: Vec<u8>,
    pub class_count: usize,
    pub split: Split,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(
        images: Tensor4<f32>,
        labels: Vec<u8>,
        class_count: usize,
        split: Split,
        normalization: Normalization,
    ) -> Result<Self> {
        if images.n() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.n(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= class_count)
        {
            return Err(Error::Data(format!(
                "label {l} at sample {i} out of range [0, {class_count})"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            split,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_dims(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dims();
        (c, h, w)
    }

    /// Copy of samples [start, end).
    pub fn subset(&self, start: usize, end: usize, split: Split) -> Result<Dataset> {
        if start >= end || end > self.len() {
            return Err(Error::Data(format!(
                "subset [{start}, {end}) out of range for {} samples",
                self.len()
            )));
        }
        let (_, c, h, w) = self.images.dims();
        let per = c * h * w;
        let images = Tensor4::from_vec(
            (end - start, c, h, w),
            self.images.data()[start * per..end * per].to_vec(),
        )?;
        Dataset::new(
            images,
            self.labels[start..end].to_vec(),
            self.class_count,
            split,
            self.normalization.clone(),
        )
    }

    /// Hold out the last `n` samples (the validation split).
    pub fn split_tail(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Data(format!(
                "cannot hold out {n} of {} samples",
                self.len()
            )));
        }
        let head = self.subset(0, self.len() - n, self.split)?;
        let tail = self.subset(self.len() - n, self.len(), Split::Val)?;
        Ok((head, tail))
    }

    /// Gather a batch by sample indices.
    pub fn gather(&self, indices: &[u32]) -> (Tensor4<f32>, Vec<u8>) {
        let (_, c, h, w) = self.images.dims();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let i = i as usize;
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        (
            Tensor4::from_vec((indices.len(), c, h, w), data).expect("batch dims valid"),
            labels,
        )
    }
}

/// One epoch of batches: a seeded permutation (or identity order), cut into
/// `batch_size` chunks with the final partial batch included.
pub struct EpochBatches<'a> {
    dataset: &'a Dataset,
    order: Vec<u32>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for EpochBatches<'a> {
    type Item = (Tensor4<f32>, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

pub fn batches<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    rng: &mut SplitMix64,
) -> Result<EpochBatches<'a>> {
    if batch_size == 0 {
        return Err(Error::arg("batches", "batch_size must be >= 1"));
    }
    let order = if shuffle {
        rng.permutation(dataset.len())
    } else {
        (0..dataset.len() as u32).collect()
    };
    Ok(EpochBatches {
        dataset,
        order,
        batch_size,
        pos: 0,
    })
}
