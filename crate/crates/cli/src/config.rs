use std::num::NonZeroUsize;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stressnet::dna::EnvironmentalFactor;
use stressnet::evolution::EvolutionConfig;
use stressnet::optim::TrainConfig;
use stressnet::stress::{StressCadence, StressConfig};
use stressnet::NetworkArchitecture;

/// Flat experiment description. Every key is optional in the file; the
/// resolved form (defaults filled in) is written to each run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub factor: f64,
    pub beta: f64,
    /// 0 applies stress once per epoch.
    pub stress_every_n_batches: usize,
    pub epochs_per_generation: usize,
    pub baseline_epochs: usize,
    pub max_generations: usize,
    /// Percentage points of test error above the baseline.
    pub accuracy_budget: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub warm_start: bool,
    pub stress_offspring: bool,
    pub log_wall_time: bool,
    pub architecture: String,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Use only the first N training images; 0 keeps all.
    pub train_samples: usize,
    pub sweep_factors: Vec<f64>,
    pub feature_samples_per_class: usize,
    pub feature_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            factor: 0.8,
            beta: 0.9,
            stress_every_n_batches: 0,
            epochs_per_generation: 4,
            baseline_epochs: 10,
            max_generations: 10,
            accuracy_budget: 1.0,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            warm_start: true,
            stress_offspring: true,
            log_wall_time: false,
            architecture: "lenet5".into(),
            dataset_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("runs/default"),
            train_samples: 0,
            sweep_factors: vec![0.95, 0.9, 0.8, 0.6, 0.4, 0.2],
            feature_samples_per_class: 100,
            feature_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: &'static str,
    pub message: String,
}

fn check(issues: &mut Vec<ConfigIssue>, ok: bool, key: &'static str, message: impl Into<String>) {
    if !ok {
        issues.push(ConfigIssue {
            key,
            message: message.into(),
        });
    }
}

impl ExperimentConfig {
    /// Every violated constraint, not only the first.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut v = Vec::new();
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        check(
            &mut v,
            unit(self.factor),
            "factor",
            format!("must lie in (0, 1], got {}", self.factor),
        );
        check(
            &mut v,
            unit(self.beta),
            "beta",
            format!("must lie in (0, 1], got {}", self.beta),
        );
        check(
            &mut v,
            self.epochs_per_generation > 0,
            "epochs_per_generation",
            "must be positive",
        );
        check(
            &mut v,
            self.baseline_epochs > 0,
            "baseline_epochs",
            "must be positive",
        );
        check(
            &mut v,
            self.accuracy_budget >= 0.0 && self.accuracy_budget.is_finite(),
            "accuracy_budget",
            format!("must be finite and >= 0, got {}", self.accuracy_budget),
        );
        check(
            &mut v,
            self.batch_size > 0,
            "batch_size",
            "must be positive",
        );
        check(
            &mut v,
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            format!("must be positive, got {}", self.learning_rate),
        );
        check(
            &mut v,
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            format!("must lie in [0, 1), got {}", self.momentum),
        );
        check(
            &mut v,
            self.architecture == "lenet5",
            "architecture",
            format!(
                "{:?} cannot be trained here; only \"lenet5\" has a dataset loader",
                self.architecture
            ),
        );
        check(
            &mut v,
            !self.sweep_factors.is_empty(),
            "sweep_factors",
            "must not be empty",
        );
        for &f in &self.sweep_factors {
            check(
                &mut v,
                unit(f),
                "sweep_factors",
                format!("{f} is outside (0, 1]"),
            );
        }
        check(
            &mut v,
            self.feature_samples_per_class > 0,
            "feature_samples_per_class",
            "must be positive",
        );
        v
    }

    pub fn arch(&self) -> NetworkArchitecture {
        NetworkArchitecture::lenet5_caffe()
    }

    /// Assumes `validate` reported nothing.
    pub fn evolution(&self) -> stressnet::Result<EvolutionConfig> {
        let cadence = match NonZeroUsize::new(self.stress_every_n_batches) {
            Some(n) => StressCadence::EveryNBatches(n),
            None => StressCadence::PerEpoch,
        };
        let cfg = EvolutionConfig {
            factor: EnvironmentalFactor::new(self.factor)?,
            stress: StressConfig {
                beta: self.beta,
                cadence,
                rng_seed: self.seed,
            },
            train: TrainConfig {
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                momentum: self.momentum,
            },
            epochs_per_generation: self.epochs_per_generation,
            baseline_epochs: self.baseline_epochs,
            max_generations: self.max_generations,
            accuracy_budget: self.accuracy_budget,
            master_seed: self.seed,
            warm_start: self.warm_start,
            stress_offspring: self.stress_offspring,
            log_wall_time: self.log_wall_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}
