//! Sparsity and size statistics, and the penultimate-layer feature study:
//! feature extraction, a 1-nearest-neighbour protocol and a PCA baseline.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::arch::{LayerSpec, NetworkArchitecture};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::forward_to;
use crate::params::ParameterSet;
use crate::tensor::{Scalar, Tensor};

/// Fixed per-model header charged by [`model_size_bytes`].
pub const MODEL_HEADER_BYTES: u64 = 64;

/// Residual bound on `|C v - lambda v|`, relative to the largest eigenvalue.
pub const PCA_RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Unmasked non-zero weights divided by the weight count of the original
/// (generation 0) architecture.
pub fn nonzero_ratio<T: Scalar>(params: &ParameterSet<T>, original_weights: usize) -> f64 {
    if original_weights == 0 {
        return 0.0;
    }
    params.nonzero_count() as f64 / original_weights as f64
}

/// Dense 32-bit storage of every weight and bias of the architecture, plus
/// [`MODEL_HEADER_BYTES`].
pub fn model_size_bytes(arch: &NetworkArchitecture) -> u64 {
    4 * (arch.total_synapses() + arch.total_biases()) as u64 + MODEL_HEADER_BYTES
}

/// Per-sample feature vectors, `[n, d]`, with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub features: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(features: Tensor<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Usage(
                "feature matrix must be two-dimensional".into(),
            ));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: features.shape()[0],
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }
}

const FEATURE_BATCH: usize = 500;

/// Activations of the fully connected layer `layer_index` for every sample,
/// taken after its ReLU when one follows it directly.
pub fn extract_features<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &ParameterSet<T>,
    data: &LabeledDataset,
    layer_index: usize,
) -> Result<FeatureMatrix> {
    match arch.layers.get(layer_index) {
        Some(LayerSpec::FullyConnected { .. }) => {}
        Some(other) => {
            return Err(Error::Usage(format!(
                "layer {layer_index} is {}, not fully_connected",
                other.kind_name()
            )))
        }
        None => {
            return Err(Error::Usage(format!(
                "layer index {layer_index} out of range ({} layers)",
                arch.layers.len()
            )))
        }
    }
    if data.is_empty() {
        return Err(Error::Usage(
            "cannot extract features of an empty dataset".into(),
        ));
    }
    let stop = match arch.layers.get(layer_index + 1) {
        Some(LayerSpec::Relu) => layer_index + 1,
        _ => layer_index,
    };
    let starts: Vec<usize> = (0..data.len()).step_by(FEATURE_BATCH).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| {
            let end = (start + FEATURE_BATCH).min(data.len());
            let out = forward_to(arch, params, &data.images_range::<T>(start, end), stop)?;
            Ok(out.data().iter().map(|v| v.to_f64()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = chunks.concat();
    let d = values.len() / data.len();
    FeatureMatrix::new(
        Tensor::new(vec![data.len(), d], values)?,
        data.labels().to_vec(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassAccuracy {
    pub label: usize,
    pub correct: usize,
    pub count: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// 1-NN accuracy per class label present in the test set, and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracyReport {
    pub per_class: Vec<ClassAccuracy>,
    pub total: f64,
}

impl ClassAccuracyReport {
    fn from_predictions(labels: &[usize], predicted: &[usize]) -> Self {
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut per_class: Vec<ClassAccuracy> = (0..classes)
            .map(|label| ClassAccuracy {
                label,
                correct: 0,
                count: 0,
            })
            .collect();
        for (&l, &p) in labels.iter().zip(predicted) {
            per_class[l].count += 1;
            per_class[l].correct += usize::from(l == p);
        }
        per_class.retain(|c| c.count > 0);
        let correct: usize = per_class.iter().map(|c| c.correct).sum();
        Self {
            per_class,
            total: correct as f64 / labels.len().max(1) as f64,
        }
    }

    /// `class,accuracy,correct,count` rows, then a `total` row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "accuracy", "correct", "count"])?;
        for c in &self.per_class {
            w.write_record([
                c.label.to_string(),
                format!("{:.6}", c.accuracy()),
                c.correct.to_string(),
                c.count.to_string(),
            ])?;
        }
        let count: usize = self.per_class.iter().map(|c| c.count).sum();
        let correct: usize = self.per_class.iter().map(|c| c.correct).sum();
        w.write_record([
            "total".to_string(),
            format!("{:.6}", self.total),
            correct.to_string(),
            count.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

fn nearest(train: &FeatureMatrix, query: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for i in 0..train.len() {
        let d: f64 = train
            .row(i)
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        // strict comparison keeps the lowest index among ties
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Labels every test sample with its Euclidean nearest training sample.
pub fn knn1_report(train: &FeatureMatrix, test: &FeatureMatrix) -> Result<ClassAccuracyReport> {
    if train.dim() != test.dim() {
        return Err(Error::dim(
            0,
            format!(
                "train features have d={}, test d={}",
                train.dim(),
                test.dim()
            ),
        ));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Usage(
            "1-NN needs non-empty train and test sets".into(),
        ));
    }
    let predicted: Vec<usize> = (0..test.len())
        .into_par_iter()
        .map(|i| train.labels[nearest(train, test.row(i))])
        .collect();
    Ok(ClassAccuracyReport::from_predictions(
        &test.labels,
        &predicted,
    ))
}

/// Principal axes of a feature set, largest variance first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k x d`, rows are unit eigenvectors of the covariance.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn fit(feats: &FeatureMatrix, k: usize) -> Result<Self> {
        let (n, d) = (feats.len(), feats.dim());
        if k > d {
            return Err(Error::Usage(format!(
                "cannot keep {k} components of {d}-dimensional data"
            )));
        }
        if n == 0 {
            return Err(Error::Usage(
                "cannot fit PCA to an empty feature set".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(feats.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| feats.row(i)[j] - mean[j]);
        let cov = centered.tr_mul(&centered) / (n.max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov.clone());

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut components = DMatrix::zeros(k, d);
        let mut eigenvalues = Vec::with_capacity(k);
        for (row, &j) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(j);
            let lambda = eig.eigenvalues[j];
            let residual = (&cov * v - v * lambda).norm();
            if residual > PCA_RESIDUAL_TOLERANCE * scale {
                return Err(Error::Convergence(format!(
                    "eigenvector {row} residual {residual:e} exceeds tolerance"
                )));
            }
            components.row_mut(row).copy_from(&v.transpose());
            eigenvalues.push(lambda);
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn transform(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        let d = self.mean.len();
        if feats.dim() != d {
            return Err(Error::dim(
                0,
                format!("PCA fitted on d={d}, given d={}", feats.dim()),
            ));
        }
        let k = self.components.nrows();
        let mut out = Vec::with_capacity(feats.len() * k);
        for i in 0..feats.len() {
            let row = feats.row(i);
            for c in 0..k {
                out.push(
                    (0..d)
                        .map(|j| self.components[(c, j)] * (row[j] - self.mean[j]))
                        .sum(),
                );
            }
        }
        FeatureMatrix::new(
            Tensor::new(vec![feats.len(), k], out)?,
            feats.labels.clone(),
        )
    }
}

/// Projection of `feats` onto its own top-`k` principal components.
pub fn pca_project(feats: &FeatureMatrix, k: usize) -> Result<FeatureMatrix> {
    Pca::fit(feats, k)?.transform(feats)
}
