//! IDX (MNIST) reader.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let head = 4 + 4 * dims;
    if bytes.len() < head {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected: head as u64,
            actual: bytes.len() as u64,
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: magic,
            found,
        });
    }
    let shape: Vec<usize> = (0..dims)
        .map(|i| be_u32(bytes, 4 + 4 * i) as usize)
        .collect();
    let expected = head as u64 + shape.iter().map(|&d| d as u64).product::<u64>();
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(shape)
}

/// Reads an image file / label file pair. Pixels are scaled to `[0, 1]`.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;
    let ishape = header(images, &img, IMAGES_MAGIC, 3)?;
    let lshape = header(labels, &lab, LABELS_MAGIC, 1)?;
    let (n, rows, cols) = (ishape[0], ishape[1], ishape[2]);
    if n != lshape[0] {
        return Err(Error::CountMismatch {
            images: n,
            labels: lshape[0],
        });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!(
            "{} holds no image data",
            images.display()
        )));
    }
    let pixels = img[16..16 + n * rows * cols]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    let labels = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    LabeledDataset::new(Tensor::new(vec![n, 1, rows, cols], pixels)?, labels)
}

fn locate(dir: &Path, split: Split, kind: &str) -> PathBuf {
    let dashed = dir.join(format!("{}-{kind}-ubyte", split.stem()));
    if dashed.exists() {
        return dashed;
    }
    let dotted = dir.join(format!(
        "{}-{}-ubyte",
        split.stem(),
        kind.replacen('-', ".", 1)
    ));
    if dotted.exists() {
        dotted
    } else {
        dashed
    }
}

/// Loads one split from a directory holding the standard file names
/// (`train-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`, ...).
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    load_idx_pair(
        &locate(dir, split, "images-idx3"),
        &locate(dir, split, "labels-idx1"),
    )
}

/// Writes an image/label pair in IDX format; handy for fixtures.
pub fn write_idx_pair(images: &Path, labels: &Path, data: &LabeledDataset) -> Result<()> {
    let (c, h, w) = data.image_shape();
    if c != 1 {
        return Err(Error::Usage("IDX images are single-channel".into()));
    }
    let n = data.len();
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend(IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        img.extend((d as u32).to_be_bytes());
    }
    img.extend(
        data.images()
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend(LABELS_MAGIC.to_be_bytes());
    lab.extend((n as u32).to_be_bytes());
    lab.extend(data.labels().iter().map(|&l| l as u8));
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, n: usize) -> LabeledDataset {
        let pixels = (0..n * 4).map(|i| (i % 256) as f32 / 255.0).collect();
        let data = LabeledDataset::new(
            Tensor::new(vec![n, 1, 2, 2], pixels).unwrap(),
            (0..n).map(|i| i % 10).collect(),
        )
        .unwrap();
        write_idx_pair(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
            &data,
        )
        .unwrap();
        data
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = fixture(dir.path(), 5);
        let back = load_mnist(dir.path(), Split::Train).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn truncated_images_report_sizes() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 5);
        let p = dir.path().join("train-images-idx3-ubyte");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match load_mnist(dir.path(), Split::Train) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 16 + 20);
                assert_eq!(actual, 16 + 17);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 2);
        let p = dir.path().join("train-labels-idx1-ubyte");
        let mut bytes = fs::read(&p).unwrap();
        bytes[3] = 0x03;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_mnist(dir.path(), Split::Train),
            Err(Error::BadMagic { found: 0x803, .. })
        ));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 4);
        let p = dir.path().join("train-labels-idx1-ubyte");
        let mut bytes = fs::read(&p).unwrap();
        bytes[7] = 3;
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_mnist(dir.path(), Split::Train),
            Err(Error::CountMismatch {
                images: 4,
                labels: 3
            })
        ));
    }
}
