//! Learnable state: weights, existence masks and biases per weighted layer.

use rand::Rng;

use crate::arch::{LayerSpec, NetworkArchitecture};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weights: Tensor<T>,
    /// Synapse existence, same length as `weights`.
    pub mask: Vec<bool>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn dense(weights: Tensor<T>, bias: Tensor<T>) -> Self {
        let mask = vec![true; weights.len()];
        Self {
            weights,
            mask,
            bias,
        }
    }

    /// Zeroes every weight whose synapse does not exist.
    pub fn apply_mask(&mut self) {
        for (w, &m) in self.weights.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *w = T::ZERO;
            }
        }
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn nonzero(&self) -> usize {
        self.weights
            .data()
            .iter()
            .zip(&self.mask)
            .filter(|(w, &m)| m && **w != T::ZERO)
            .count()
    }

    /// Weights with masked positions forced to zero, regardless of what is stored.
    pub(crate) fn effective_weights(&self) -> Vec<T> {
        self.weights
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&w, &m)| if m { w } else { T::ZERO })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    /// Glorot-uniform weights, zero biases, full masks.
    pub fn init(arch: &NetworkArchitecture, rng: &mut impl Rng) -> Self {
        let layers = arch
            .layers
            .iter()
            .filter(|l| l.is_weighted())
            .map(|layer| {
                let shape = layer.weight_shape().expect("weighted");
                let (fan_in, fan_out) = match *layer {
                    LayerSpec::Conv2d(c) => {
                        (c.kernel_volume(), c.filters * c.kernel_h * c.kernel_w)
                    }
                    LayerSpec::FullyConnected {
                        in_features,
                        out_features,
                    } => (in_features, out_features),
                    _ => unreachable!(),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
                    .collect();
                let units = shape[0];
                LayerParams::dense(
                    Tensor::new(shape, data).expect("shape from arch"),
                    Tensor::zeros(vec![units]),
                )
            })
            .collect();
        Self { layers }
    }

    /// Checks tensor shapes against the architecture and the mask invariants.
    pub fn validate(&self, arch: &NetworkArchitecture) -> Result<()> {
        let weighted: Vec<(usize, &LayerSpec)> = arch
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .collect();
        if weighted.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "architecture has {} weighted layers, parameters have {}",
                weighted.len(),
                self.layers.len()
            )));
        }
        for ((idx, spec), p) in weighted.into_iter().zip(&self.layers) {
            let shape = spec.weight_shape().expect("weighted");
            if p.weights.shape() != shape.as_slice() {
                return Err(Error::dim(
                    idx,
                    format!(
                        "weights {:?} but layer needs {:?}",
                        p.weights.shape(),
                        shape
                    ),
                ));
            }
            if p.mask.len() != p.weights.len() {
                return Err(Error::dim(idx, "mask length differs from weight count"));
            }
            if p.bias.shape() != [shape[0]] {
                return Err(Error::dim(
                    idx,
                    format!("bias {:?} but layer has {} units", p.bias.shape(), shape[0]),
                ));
            }
        }
        Ok(())
    }

    pub fn apply_masks(&mut self) {
        self.layers.iter_mut().for_each(LayerParams::apply_mask);
    }

    pub fn unmasked_count(&self) -> usize {
        self.layers.iter().map(LayerParams::unmasked).sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.layers.iter().map(LayerParams::nonzero).sum()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.cast(),
                    mask: l.mask.clone(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.all_finite() && l.bias.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_glorot_bound() {
        let arch = NetworkArchitecture::lenet5_caffe();
        let params = ParameterSet::<f32>::init(&arch, &mut ChaCha8Rng::seed_from_u64(1));
        params.validate(&arch).unwrap();
        let fc1 = &params.layers[2];
        let limit = (6.0f32 / 1300.0).sqrt();
        assert!(fc1.weights.data().iter().all(|w| w.abs() <= limit));
        assert_eq!(params.unmasked_count(), 430_500);
    }

    #[test]
    fn apply_mask_zeroes_absent_synapses() {
        let mut layer = LayerParams::dense(
            Tensor::new(vec![1, 3], vec![1.0f32, 2.0, 3.0]).unwrap(),
            Tensor::zeros(vec![1]),
        );
        layer.mask[1] = false;
        layer.apply_mask();
        assert_eq!(layer.weights.data(), &[1.0, 0.0, 3.0]);
        assert_eq!(layer.nonzero(), 2);
    }
}
