//! Epoch-level stochastic weakening of synapses.
//!
//! Each unmasked synapse `i` of layer `l` keeps its strength with probability
//! `q_i = exp(|w_i| / z_l - 1)`, where `z_l` is the largest unmasked magnitude
//! in the layer; otherwise it is multiplied by `beta`. The weakening is
//! applied to the live weights, so it accumulates over epochs.

use std::io::Write;
use std::num::NonZeroUsize;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StressCadence {
    PerEpoch,
    EveryNBatches(NonZeroUsize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressConfig {
    pub beta: f64,
    pub cadence: StressCadence,
    pub rng_seed: u64,
}

impl StressConfig {
    pub fn new(beta: f64, rng_seed: u64) -> Result<Self> {
        let cfg = Self {
            beta,
            cadence: StressCadence::PerEpoch,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Usage(format!(
                "beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Record of one stress application, one entry per unmasked synapse in
/// layer-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StressDraw {
    /// Flat synapse index across all weighted layers.
    pub synapse: Vec<usize>,
    pub keep_probs: Vec<f64>,
    pub uniforms: Vec<f64>,
    pub weakened: Vec<bool>,
    pub epoch_index: usize,
    pub generation_index: usize,
}

impl StressDraw {
    pub fn weakened_fraction(&self) -> f64 {
        if self.weakened.is_empty() {
            return 0.0;
        }
        self.weakened.iter().filter(|&&w| w).count() as f64 / self.weakened.len() as f64
    }

    /// Audit dump: `synapse,q,u,weakened`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["synapse", "q", "u", "weakened"])?;
        for i in 0..self.synapse.len() {
            w.write_record([
                self.synapse[i].to_string(),
                self.keep_probs[i].to_string(),
                self.uniforms[i].to_string(),
                u8::from(self.weakened[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest unmasked weight magnitude of a layer.
pub fn layer_normalizer<T: Scalar>(weights: &[T], mask: &[bool], layer: usize) -> Result<f64> {
    let z = weights
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(w, _)| w.to_f64().abs())
        .fold(0.0f64, f64::max);
    if z > 0.0 && z.is_finite() {
        Ok(z)
    } else {
        Err(Error::DegenerateLayer { layer })
    }
}

/// `exp(|w| / z - 1)`; equals 1 at the layer's strongest synapse and
/// `e^-1` at zero strength.
pub fn keep_probability(w: f64, z: f64) -> f64 {
    (w.abs() / z - 1.0).exp()
}

/// Applies one round of Bernoulli weakening in place and returns the draw.
pub fn stress_epoch<T: Scalar>(
    params: &mut ParameterSet<T>,
    config: &StressConfig,
    epoch_index: usize,
    generation_index: usize,
    rng: &mut impl Rng,
) -> Result<StressDraw> {
    config.validate()?;
    let beta = T::from_f64(config.beta);
    let mut draw = StressDraw {
        epoch_index,
        generation_index,
        ..StressDraw::default()
    };
    let mut offset = 0;
    for (li, layer) in params.layers.iter_mut().enumerate() {
        let z = layer_normalizer(layer.weights.data(), &layer.mask, li)?;
        for (i, (w, &m)) in layer
            .weights
            .data_mut()
            .iter_mut()
            .zip(&layer.mask)
            .enumerate()
        {
            if !m {
                continue;
            }
            let q = keep_probability(w.to_f64(), z);
            let u: f64 = rng.gen();
            let weaken = q < u;
            if weaken {
                *w *= beta;
            }
            draw.synapse.push(offset + i);
            draw.keep_probs.push(q);
            draw.uniforms.push(u);
            draw.weakened.push(weaken);
        }
        offset += layer.weights.len();
    }
    Ok(draw)
}

/// Mean of `1 - q` over the unmasked synapses of one layer, given `z`.
pub fn expected_weaken_fraction_with<T: Scalar>(weights: &[T], mask: &[bool], z: f64) -> f64 {
    let (sum, count) = weights
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (w, _)| {
            (s + 1.0 - keep_probability(w.to_f64(), z), c + 1)
        });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean of `1 - q` over every unmasked synapse of the network.
pub fn expected_weaken_fraction<T: Scalar>(params: &ParameterSet<T>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (li, layer) in params.layers.iter().enumerate() {
        let z = layer_normalizer(layer.weights.data(), &layer.mask, li)?;
        let n = layer.unmasked();
        sum += expected_weaken_fraction_with(layer.weights.data(), &layer.mask, z) * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayerParams;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_layer(w: Vec<f64>) -> ParameterSet<f64> {
        let n = w.len();
        ParameterSet {
            layers: vec![LayerParams::dense(
                Tensor::new(vec![1, n], w).unwrap(),
                Tensor::zeros(vec![1]),
            )],
        }
    }

    #[test]
    fn normalizer_is_max_unmasked_magnitude() {
        assert_eq!(
            layer_normalizer(&[0.5, -2.0, 1.0], &[true; 3], 0).unwrap(),
            2.0
        );
        assert_eq!(
            layer_normalizer(&[0.5, -2.0], &[true, false], 0).unwrap(),
            0.5
        );
        assert!(matches!(
            layer_normalizer(&[0.0f64, 0.0], &[true, true], 3),
            Err(Error::DegenerateLayer { layer: 3 })
        ));
    }

    #[test]
    fn keep_probability_values() {
        assert_eq!(keep_probability(2.0, 2.0), 1.0);
        assert!((keep_probability(0.0, 2.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((keep_probability(-1.0, 2.0) - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn beta_one_is_identity() {
        let mut p = one_layer(vec![0.1, -0.7, 0.0, 0.3, 1.2]);
        let before = p.clone();
        let cfg = StressConfig::new(1.0, 0).unwrap();
        let draw = stress_epoch(&mut p, &cfg, 0, 0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(p, before);
        assert_eq!(draw.keep_probs.len(), 5);
    }

    #[test]
    fn strongest_synapses_are_never_weakened() {
        let mut p = one_layer(vec![0.4, -0.4, 0.4]);
        let before = p.clone();
        let cfg = StressConfig::new(0.5, 0).unwrap();
        for seed in 0..20 {
            stress_epoch(&mut p, &cfg, 0, 0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn masked_synapses_untouched_and_unrecorded() {
        let mut p = one_layer(vec![1.0, 0.01, 0.02]);
        p.layers[0].mask[1] = false;
        let cfg = StressConfig::new(0.5, 0).unwrap();
        let draw = stress_epoch(&mut p, &cfg, 0, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(draw.synapse, vec![0, 2]);
        assert_eq!(p.layers[0].weights.data()[1], 0.01);
    }

    #[test]
    fn expected_fraction_for_mixed_strengths() {
        let z = 2.0;
        let f = expected_weaken_fraction_with(&[0.0f64, 1.0, 2.0], &[true; 3], z);
        let oracle = ((1.0 - (-1.0f64).exp()) + (1.0 - (-0.5f64).exp())) / 3.0;
        assert!((f - oracle).abs() < 1e-15);
        assert!((f - 0.3418).abs() < 1e-4);
        let zero = expected_weaken_fraction_with(&[0.0f64; 4], &[true; 4], 1.0);
        assert!((zero - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let full = expected_weaken_fraction(&one_layer(vec![0.3, -0.3])).unwrap();
        assert_eq!(full, 0.0);
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(StressConfig::new(0.0, 0).is_err());
        assert!(StressConfig::new(1.5, 0).is_err());
    }

    #[test]
    fn audit_csv_has_one_row_per_synapse() {
        let mut p = one_layer(vec![1.0, 0.2]);
        let cfg = StressConfig::new(0.9, 0).unwrap();
        let draw = stress_epoch(&mut p, &cfg, 0, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut buf = Vec::new();
        draw.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("synapse,q,u,weakened\n0,1,"));
    }
}
