//! IDX-format loader (big-endian, the handwritten-digit distribution
//! format): image files carry magic 0x00000803 and dims [n, rows, cols],
//! label files magic 0x00000801 and [n]. Parse failures report the byte
//! offset in the offending file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::{Dataset, Normalization, Split};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, what: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            what: what.into(),
        }
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated while reading {what}: need 4 bytes, file has {}",
                self.bytes.len()
            )));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse paired IDX image/label files into a dataset with pixels scaled to
/// [0, 1], dims (n, 1, rows, cols).
pub fn load_mnist_idx(image_path: &Path, label_path: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = read_file(image_path)?;
    let mut img = Cursor {
        bytes: &image_bytes,
        pos: 0,
        path: image_path,
    };
    let magic = img.u32_be("image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        img.pos = 0;
        return Err(img.fail(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let n = img.u32_be("image count")? as usize;
    let rows = img.u32_be("row count")? as usize;
    let cols = img.u32_be("col count")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(img.fail(format!("degenerate dims n={n} rows={rows} cols={cols}")));
    }
    let pixels = img.take(n * rows * cols, "pixel payload")?;
    img.expect_end()?;

    let label_bytes = read_file(label_path)?;
    let mut lab = Cursor {
        bytes: &label_bytes,
        pos: 0,
        path: label_path,
    };
    let magic = lab.u32_be("label magic")?;
    if magic != IDX_LABEL_MAGIC {
        lab.pos = 0;
        return Err(lab.fail(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let n_labels = lab.u32_be("label count")? as usize;
    if n_labels != n {
        return Err(Error::Data(format!(
            "{} images in {} but {} labels in {}",
            n,
            image_path.display(),
            n_labels,
            label_path.display()
        )));
    }
    let labels_raw = lab.take(n_labels, "label payload")?;
    lab.expect_end()?;
    if let Some(i) = labels_raw.iter().position(|&l| l >= 10) {
        return Err(Error::Parse {
            path: label_path.to_path_buf(),
            offset: (8 + i) as u64,
            what: format!("label {} out of range [0, 10)", labels_raw[i]),
        });
    }

    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor4::from_vec((n, 1, rows, cols), data)?;
    Dataset::new(
        images,
        labels_raw.to_vec(),
        10,
        split,
        Normalization::identity(1),
    )
}

/// Write an IDX image file (for the synthetic corpus and tests).
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images-idx3-ubyte");
        let lab = dir.join("labels-idx1-ubyte");
        let pixels: Vec<u8> = (0..n * 28 * 28).map(|i| (i % 251) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        write_idx_images(&img, n, 28, 28, &pixels).unwrap();
        write_idx_labels(&lab, &labels).unwrap();
        (img, lab)
    }

    #[test]
    fn loads_valid_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_pair(dir.path(), 50);
        let ds = load_mnist_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.images.dims(), (50, 1, 28, 28));
        assert_eq!(ds.labels.len(), 50);
        assert_eq!(ds.labels[7], 7);
        // pixel scaling
        assert!((ds.images.data()[1] - 1.0 / 255.0).abs() < 1e-7);
        assert!(ds.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn corrupt_magic_is_rejected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_pair(dir.path(), 3);
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[3] = 0xFF;
        std::fs::write(&img, bytes).unwrap();
        let err = load_mnist_idx(&img, &lab, Split::Train).unwrap_err();
        match err {
            Error::Parse { offset, what, .. } => {
                assert_eq!(offset, 0);
                assert!(what.contains("magic"), "{what}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_pair(dir.path(), 3);
        let mut bytes = std::fs::read(&img).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&img, bytes).unwrap();
        let err = load_mnist_idx(&img, &lab, Split::Train).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = write_pair(dir.path(), 3);
        let lab2 = dir.path().join("short-labels");
        write_idx_labels(&lab2, &[0, 1]).unwrap();
        let err = load_mnist_idx(&img, &lab2, Split::Train).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = write_pair(dir.path(), 3);
        let lab2 = dir.path().join("bad-labels");
        write_idx_labels(&lab2, &[0, 12, 1]).unwrap();
        let err = load_mnist_idx(&img, &lab2, Split::Train).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 9),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
