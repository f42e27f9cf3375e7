//! Dataset discovery: map (kind, data_dir) to loaded train/test splits with
//! the standard file names, reusing training normalization for eval splits.

use std::path::{Path, PathBuf};

use cmsc::data::cifar::{load_cifar100_bin, load_cifar10_bin, load_svhn_bin};
use cmsc::data::mnist::load_mnist_idx;
use cmsc::data::synth::synth_dataset;
use cmsc::data::{Dataset, Normalization, Split};
use cmsc::error::{Error, Result};

use crate::cli::DatasetKind;

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Data(format!("missing data file: {}", path.display())))
    }
}

fn data_dir<'a>(kind: DatasetKind, dir: &'a Option<PathBuf>) -> Result<&'a Path> {
    dir.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "--data-dir is required for dataset '{}'",
            kind.as_str()
        ))
    })
}

pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Load both splits. Synthetic sizes apply only to the built-in corpus.
pub fn load_train_test(
    kind: DatasetKind,
    dir: &Option<PathBuf>,
    synth_train: usize,
    synth_test: usize,
) -> Result<LoadedData> {
    match kind {
        DatasetKind::Synth => Ok(LoadedData {
            train: synth_dataset(synth_train, 20_260_101, Split::Train)?,
            test: synth_dataset(synth_test, 20_260_102, Split::Test)?,
        }),
        DatasetKind::Mnist => {
            let d = data_dir(kind, dir)?;
            let train = load_mnist_idx(
                &require(d.join("train-images-idx3-ubyte"))?,
                &require(d.join("train-labels-idx1-ubyte"))?,
                Split::Train,
            )?;
            let test = load_mnist_idx(
                &require(d.join("t10k-images-idx3-ubyte"))?,
                &require(d.join("t10k-labels-idx1-ubyte"))?,
                Split::Test,
            )?;
            Ok(LoadedData { train, test })
        }
        DatasetKind::Cifar10 => {
            let d = data_dir(kind, dir)?;
            let train_paths: Vec<PathBuf> = (1..=5)
                .map(|i| require(d.join(format!("data_batch_{i}.bin"))))
                .collect::<Result<_>>()?;
            let train = load_cifar10_bin(&train_paths, Split::Train, None)?;
            let test = load_cifar10_bin(
                &[require(d.join("test_batch.bin"))?],
                Split::Test,
                Some(train.normalization.clone()),
            )?;
            Ok(LoadedData { train, test })
        }
        DatasetKind::Cifar100 => {
            let d = data_dir(kind, dir)?;
            let train = load_cifar100_bin(&[require(d.join("train.bin"))?], Split::Train, None)?;
            let test = load_cifar100_bin(
                &[require(d.join("test.bin"))?],
                Split::Test,
                Some(train.normalization.clone()),
            )?;
            Ok(LoadedData { train, test })
        }
        DatasetKind::Svhn => {
            let d = data_dir(kind, dir)?;
            let train = load_svhn_bin(&[require(d.join("train.bin"))?], Split::Train, None)?;
            let test = load_svhn_bin(
                &[require(d.join("test.bin"))?],
                Split::Test,
                Some(train.normalization.clone()),
            )?;
            Ok(LoadedData { train, test })
        }
    }
}

/// Load only the test split, reusing the supplied normalization constants
/// (from a checkpoint) when the format calls for them.
pub fn load_test_split(
    kind: DatasetKind,
    dir: &Option<PathBuf>,
    norm: Option<Normalization>,
    synth_test: usize,
) -> Result<Dataset> {
    match kind {
        DatasetKind::Synth => synth_dataset(synth_test, 20_260_102, Split::Test),
        DatasetKind::Mnist => {
            let d = data_dir(kind, dir)?;
            load_mnist_idx(
                &require(d.join("t10k-images-idx3-ubyte"))?,
                &require(d.join("t10k-labels-idx1-ubyte"))?,
                Split::Test,
            )
        }
        DatasetKind::Cifar10 => {
            let d = data_dir(kind, dir)?;
            load_cifar10_bin(&[require(d.join("test_batch.bin"))?], Split::Test, norm)
        }
        DatasetKind::Cifar100 => {
            let d = data_dir(kind, dir)?;
            load_cifar100_bin(&[require(d.join("test.bin"))?], Split::Test, norm)
        }
        DatasetKind::Svhn => {
            let d = data_dir(kind, dir)?;
            load_svhn_bin(&[require(d.join("test.bin"))?], Split::Test, norm)
        }
    }
}
