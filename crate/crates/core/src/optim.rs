//! Momentum SGD and the mini-batch epoch driver.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::arch::NetworkArchitecture;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{loss_and_gradients, Gradients};
use crate::params::ParameterSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be positive".into()));
        }
        check_hyper(self.learning_rate, self.momentum)
    }
}

fn check_hyper(lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Usage(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Usage(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    Ok(())
}

/// Momentum SGD: `v = momentum * v + g; w -= lr * v`, then `w *= mask`.
#[derive(Debug, Clone)]
pub struct Sgd<T = f32> {
    learning_rate: T,
    momentum: T,
    velocity: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &ParameterSet<T>, learning_rate: f64, momentum: f64) -> Result<Self> {
        check_hyper(learning_rate, momentum)?;
        Ok(Self {
            learning_rate: T::from_f64(learning_rate),
            momentum: T::from_f64(momentum),
            velocity: params
                .layers
                .iter()
                .map(|l| (vec![T::ZERO; l.weights.len()], vec![T::ZERO; l.bias.len()]))
                .collect(),
        })
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != params.layers.len() || self.velocity.len() != params.layers.len() {
            return Err(Error::Usage(
                "gradient and parameter layer counts differ".into(),
            ));
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for (li, ((layer, grad), (vw, vb))) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.velocity)
            .enumerate()
        {
            if grad.weights.len() != layer.weights.len() || grad.bias.len() != layer.bias.len() {
                return Err(Error::dim(li, "gradient shape differs from parameters"));
            }
            for (((w, &g), v), &m) in layer
                .weights
                .data_mut()
                .iter_mut()
                .zip(grad.weights.data())
                .zip(vw.iter_mut())
                .zip(&layer.mask)
            {
                *v = mu * *v + g;
                *w = if m { *w - lr * *v } else { T::ZERO };
            }
            for ((b, &g), v) in layer
                .bias
                .data_mut()
                .iter_mut()
                .zip(grad.bias.data())
                .zip(vb.iter_mut())
            {
                *v = mu * *v + g;
                *b -= lr * *v;
            }
        }
        Ok(())
    }
}

/// One pass over `data` in a seeded random order. `after_batch` runs after
/// every update with the 1-based count of completed batches.
pub fn train_epoch<T: Scalar, R: Rng>(
    arch: &NetworkArchitecture,
    params: &mut ParameterSet<T>,
    data: &LabeledDataset,
    config: &TrainConfig,
    sgd: &mut Sgd<T>,
    rng: &mut R,
    mut after_batch: impl FnMut(usize, &mut ParameterSet<T>, &mut R) -> Result<()>,
) -> Result<f64> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut labels = Vec::with_capacity(config.batch_size);
    for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch = data.gather::<T>(chunk);
        labels.clear();
        labels.extend(chunk.iter().map(|&i| data.labels()[i]));
        let (loss, grads) = loss_and_gradients(arch, params, &batch, &labels)?;
        total += loss * chunk.len() as f64;
        sgd.step(params, &grads)?;
        after_batch(bi + 1, params, rng)?;
    }
    if !params.all_finite() {
        return Err(Error::NumericalOverflow(
            "parameters diverged during training".into(),
        ));
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerGrads;
    use crate::params::LayerParams;
    use crate::tensor::Tensor;

    fn single(w: Vec<f64>) -> ParameterSet<f64> {
        let n = w.len();
        ParameterSet {
            layers: vec![LayerParams::dense(
                Tensor::new(vec![1, n], w).unwrap(),
                Tensor::zeros(vec![1]),
            )],
        }
    }

    fn grads(g: Vec<f64>) -> Gradients<f64> {
        let n = g.len();
        Gradients {
            layers: vec![LayerGrads {
                weights: Tensor::new(vec![1, n], g).unwrap(),
                bias: Tensor::zeros(vec![1]),
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(vec![0.5, -0.25]);
        let before = p.clone();
        let mut sgd = Sgd::new(&p, 0.1, 0.9).unwrap();
        sgd.step(&mut p, &grads(vec![0.0, 0.0])).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn plain_step_is_w_minus_g_times_mask() {
        let mut p = single(vec![1.0, 2.0, 3.0]);
        p.layers[0].mask[2] = false;
        let mut sgd = Sgd::new(&p, 1.0, 0.0).unwrap();
        sgd.step(&mut p, &grads(vec![0.5, -1.0, 4.0])).unwrap();
        assert_eq!(p.layers[0].weights.data(), &[0.5, 3.0, 0.0]);
    }

    #[test]
    fn momentum_accumulates_over_two_steps() {
        // v1 = g, v2 = 0.9 g + g, so the weight moves by lr * g * (1 + 1.9)
        let (lr, g) = (0.1, 0.5);
        let mut p = single(vec![1.0]);
        let mut sgd = Sgd::new(&p, lr, 0.9).unwrap();
        sgd.step(&mut p, &grads(vec![g])).unwrap();
        sgd.step(&mut p, &grads(vec![g])).unwrap();
        let delta = 1.0 - p.layers[0].weights.data()[0];
        assert!((delta - lr * g * 2.9).abs() < 1e-12);
    }

    #[test]
    fn hyperparameters_are_checked() {
        let p = single(vec![1.0]);
        assert!(Sgd::new(&p, 0.0, 0.5).is_err());
        assert!(Sgd::new(&p, 0.1, 1.0).is_err());
    }
}
