use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Images `N x C x H x W` scaled to `[0, 1]` with one class index per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Usage(format!(
                "images must be N x C x H x W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `(C, H, W)` of a single image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    fn sample_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    pub fn images_range<T: Scalar>(&self, start: usize, end: usize) -> Tensor<T> {
        let len = self.sample_len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = end - start;
        let data = self.images.data()[start * len..end * len]
            .iter()
            .map(|&v| T::from_f64(v as f64))
            .collect();
        Tensor::new(shape, data).expect("slice of a valid tensor")
    }

    /// Images at `indices`, in that order.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend(
                self.images.data()[i * len..(i + 1) * len]
                    .iter()
                    .map(|&v| T::from_f64(v as f64)),
            );
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(shape, data).expect("gathered shape")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.rows(0, n),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// `per_class` samples from each class present, chosen by a seeded
    /// shuffle; ordered by class, then by shuffled position.
    pub fn sample_per_class(&self, per_class: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::new();
        for class in 0..num_classes {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            idx.shuffle(&mut rng);
            idx.truncate(per_class);
            picked.extend(idx);
        }
        self.subset(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset {
        let images = Tensor::new(vec![6, 1, 1, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        LabeledDataset::new(images, vec![0, 1, 0, 1, 0, 2]).unwrap()
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let images = Tensor::new(vec![2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            LabeledDataset::new(images, vec![0]),
            Err(Error::CountMismatch {
                images: 2,
                labels: 1
            })
        ));
    }

    #[test]
    fn per_class_sampling_is_seeded() {
        let d = toy();
        let a = d.sample_per_class(2, 3, 7);
        let b = d.sample_per_class(2, 3, 7);
        assert_eq!(a, b);
        assert_eq!(a.labels(), &[0, 0, 1, 1, 2]);
    }

    #[test]
    fn gather_keeps_order() {
        let d = toy();
        let t = d.gather::<f64>(&[2, 0]);
        assert_eq!(t.data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
