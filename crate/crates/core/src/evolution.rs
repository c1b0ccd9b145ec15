//! The generational loop: stressed training, offspring synthesis, retraining,
//! evaluation and the accuracy-budget stopping rule.

use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{model_size_bytes, nonzero_ratio};
use crate::arch::NetworkArchitecture;
use crate::data::LabeledDataset;
use crate::dna::{
    apply_environment, build_clusters, encode_dna, materialize, sample_offspring,
    EnvironmentalFactor, SynapticProbabilityModel,
};
use crate::error::{Error, Result};
use crate::nn::evaluate;
use crate::optim::{train_epoch, Sgd, TrainConfig};
use crate::params::ParameterSet;
use crate::rng::{generation_seed, stream_rng, stream_seed, Stream};
use crate::stress::{stress_epoch, StressCadence, StressConfig};
use crate::tensor::Scalar;

/// Offspring draws per generation before the lineage is declared extinct.
pub const EXTINCTION_ATTEMPTS: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub factor: EnvironmentalFactor,
    pub stress: StressConfig,
    pub train: TrainConfig,
    pub epochs_per_generation: usize,
    pub baseline_epochs: usize,
    pub max_generations: usize,
    /// Largest tolerated rise of the test error over the baseline, in
    /// percentage points.
    pub accuracy_budget: f64,
    pub master_seed: u64,
    /// Offspring inherit the parent's surviving weights instead of a fresh
    /// initialization.
    pub warm_start: bool,
    /// Stress offspring during retraining, not only the baseline.
    pub stress_offspring: bool,
    /// Record real elapsed time; off by default so logs are reproducible.
    pub log_wall_time: bool,
}

impl EvolutionConfig {
    pub fn new(factor: f64, beta: f64, master_seed: u64) -> Result<Self> {
        let cfg = Self {
            factor: EnvironmentalFactor::new(factor)?,
            stress: StressConfig::new(beta, master_seed)?,
            train: TrainConfig::default(),
            epochs_per_generation: 4,
            baseline_epochs: 10,
            max_generations: 10,
            accuracy_budget: 1.0,
            master_seed,
            warm_start: true,
            stress_offspring: true,
            log_wall_time: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stress.validate()?;
        self.train.validate()?;
        EnvironmentalFactor::new(self.factor.value())?;
        if self.epochs_per_generation == 0 || self.baseline_epochs == 0 {
            return Err(Error::Usage("epoch counts must be positive".into()));
        }
        if !(self.accuracy_budget >= 0.0 && self.accuracy_budget.is_finite()) {
            return Err(Error::Usage(format!(
                "accuracy budget must be a finite value >= 0, got {}",
                self.accuracy_budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Fraction of synapses weakened by each stress application.
    pub weakened: Vec<f64>,
}

/// `epochs` rounds of one SGD epoch followed by one stress application
/// (or one every N batches, per the cadence). `rng` drives shuffling; the
/// stress draws use their own generator seeded from `stress.rng_seed`, so
/// `beta = 1` leaves the training trajectory untouched.
pub fn train_with_stress<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &mut ParameterSet<T>,
    data: &LabeledDataset,
    epochs: usize,
    train: &TrainConfig,
    stress: &StressConfig,
    rng: &mut impl Rng,
) -> Result<TrainReport> {
    if epochs == 0 {
        return Err(Error::Usage("epochs must be positive".into()));
    }
    stress.validate()?;
    let mut sgd = Sgd::new(params, train.learning_rate, train.momentum)?;
    let mut stress_rng = ChaCha8Rng::seed_from_u64(stress.rng_seed);
    let mut report = TrainReport::default();
    for epoch in 0..epochs {
        let mut weakened = Vec::new();
        let loss = train_epoch(arch, params, data, train, &mut sgd, rng, |batch, p, _| {
            if let StressCadence::EveryNBatches(n) = stress.cadence {
                if batch % n.get() == 0 {
                    weakened.push(
                        stress_epoch(p, stress, epoch, 0, &mut stress_rng)?.weakened_fraction(),
                    );
                }
            }
            Ok(())
        })?;
        if stress.cadence == StressCadence::PerEpoch {
            weakened
                .push(stress_epoch(params, stress, epoch, 0, &mut stress_rng)?.weakened_fraction());
        }
        report.epoch_losses.push(loss);
        report.weakened.extend(weakened);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub descriptor: String,
    /// Weight count of this generation's architecture.
    pub params_total: usize,
    pub params_nonzero: usize,
    /// `params_nonzero` over the generation-0 weight count.
    pub nonzero_ratio: f64,
    /// Fraction of misclassified test samples.
    pub test_error: f64,
    pub model_size_bytes: u64,
    pub seed: u64,
    pub wall_seconds: f64,
    /// Expected survivors under the calibrated encoding that produced this
    /// generation; the parent's present count for generation 0. Not part of
    /// the CSV log.
    pub expected_synapses: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetExceeded,
    MaxGenerations,
    Extinct,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::BudgetExceeded => "budget_exceeded",
            StopReason::MaxGenerations => "max_generations",
            StopReason::Extinct => "extinct",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lineage {
    pub records: Vec<GenerationRecord>,
    pub stop_reason: StopReason,
    /// Index of the last record within the accuracy budget.
    pub best: usize,
}

impl Lineage {
    pub fn best_record(&self) -> &GenerationRecord {
        &self.records[self.best]
    }
}

/// A network together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub arch: NetworkArchitecture,
    pub params: ParameterSet<f32>,
}

/// Everything needed to continue a lineage after the last completed
/// generation. Random streams are pure functions of the master seed and the
/// generation counter, so no generator state is carried.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub generation: usize,
    pub records: Vec<GenerationRecord>,
    pub parent: Individual,
    pub baseline: Individual,
    pub best: usize,
    pub best_net: Individual,
    /// Calibrated encoding that produced `parent`.
    pub dna: Option<SynapticProbabilityModel>,
    pub finished: Option<StopReason>,
}

impl EvolutionState {
    pub fn baseline_error(&self) -> f64 {
        self.records[0].test_error
    }

    pub fn original_weights(&self) -> usize {
        self.baseline.arch.total_synapses()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOutcome {
    pub lineage: Lineage,
    pub baseline: Individual,
    /// Network of the best (last in-budget) generation.
    pub best: Individual,
}

fn offspring_stress(config: &EvolutionConfig, generation: u64, active: bool) -> StressConfig {
    StressConfig {
        beta: if active { config.stress.beta } else { 1.0 },
        cadence: config.stress.cadence,
        rng_seed: stream_seed(config.master_seed, generation, Stream::Stress, 0),
    }
}

fn record(
    config: &EvolutionConfig,
    generation: usize,
    net: &Individual,
    original: usize,
    test_error: f64,
    expected: f64,
    started: Instant,
) -> GenerationRecord {
    GenerationRecord {
        generation,
        descriptor: net.arch.descriptor(),
        params_total: net.params.total_weights(),
        params_nonzero: net.params.nonzero_count(),
        nonzero_ratio: nonzero_ratio(&net.params, original),
        test_error,
        model_size_bytes: model_size_bytes(&net.arch),
        seed: generation_seed(config.master_seed, generation as u64),
        wall_seconds: if config.log_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
        expected_synapses: Some(expected),
    }
}

fn baseline_state(
    config: &EvolutionConfig,
    arch0: &NetworkArchitecture,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<EvolutionState> {
    let started = Instant::now();
    let mut params = ParameterSet::<f32>::init(
        arch0,
        &mut stream_rng(config.master_seed, 0, Stream::Init, 0),
    );
    train_with_stress(
        arch0,
        &mut params,
        train,
        config.baseline_epochs,
        &config.train,
        &offspring_stress(config, 0, true),
        &mut stream_rng(config.master_seed, 0, Stream::Shuffle, 0),
    )?;
    let err = evaluate(arch0, &params, test)?;
    let net = Individual {
        arch: arch0.clone(),
        params,
    };
    let present = net.params.nonzero_count() as f64;
    let rec = record(
        config,
        0,
        &net,
        arch0.total_synapses(),
        err,
        present,
        started,
    );
    Ok(EvolutionState {
        generation: 0,
        records: vec![rec],
        parent: net.clone(),
        baseline: net.clone(),
        best: 0,
        best_net: net,
        dna: None,
        finished: None,
    })
}

/// Draws and materializes an offspring, resampling on extinction.
fn synthesize(
    config: &EvolutionConfig,
    generation: u64,
    parent: &Individual,
) -> Result<Option<(Individual, SynapticProbabilityModel)>> {
    let clusters = build_clusters(&parent.arch);
    let model = encode_dna(&parent.params, &clusters, generation as usize - 1)?;
    let env = apply_environment(&model, config.factor, &clusters)?;
    for attempt in 0..EXTINCTION_ATTEMPTS {
        let mut rng = stream_rng(config.master_seed, generation, Stream::Synthesis, attempt);
        let states = sample_offspring(&env, &clusters, &mut rng)?;
        match materialize(&states, &parent.arch, &parent.params) {
            Ok((arch, params)) => return Ok(Some((Individual { arch, params }, env))),
            Err(Error::ExtinctLineage { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Runs one lineage from scratch. See [`evolve_with`].
pub fn evolve(
    config: &EvolutionConfig,
    arch0: &NetworkArchitecture,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<EvolutionOutcome> {
    evolve_with(config, arch0, train, test, None, |_| Ok(()))
}

/// Generation 0 trains the baseline; each later generation encodes the
/// parent, samples and materializes an offspring, retrains and evaluates
/// it. The loop stops when the error rises more than the budget above the
/// baseline (the result rolls back to the last compliant generation), at
/// `max_generations`, or when every offspring draw goes extinct.
///
/// With `resume`, the loop continues from a saved state; `on_generation`
/// sees the state after every completed generation.
pub fn evolve_with(
    config: &EvolutionConfig,
    arch0: &NetworkArchitecture,
    train: &LabeledDataset,
    test: &LabeledDataset,
    resume: Option<EvolutionState>,
    mut on_generation: impl FnMut(&EvolutionState) -> Result<()>,
) -> Result<EvolutionOutcome> {
    config.validate()?;
    let mut state = match resume {
        Some(mut s) => {
            if s.records.is_empty() || s.baseline.arch != *arch0 {
                return Err(Error::Usage(
                    "resume state does not belong to this architecture".into(),
                ));
            }
            // a run that only hit its generation cap may be extended
            if s.finished == Some(StopReason::MaxGenerations) {
                s.finished = None;
            }
            s
        }
        None => {
            let s = baseline_state(config, arch0, train, test)?;
            on_generation(&s)?;
            s
        }
    };

    while state.finished.is_none() {
        if state.generation >= config.max_generations {
            state.finished = Some(StopReason::MaxGenerations);
            break;
        }
        let g = state.generation + 1;
        let started = Instant::now();
        let Some((mut child, env)) = synthesize(config, g as u64, &state.parent)? else {
            if state.records.len() == 1 {
                return Err(Error::ExtinctLineage { layer: 0 });
            }
            state.finished = Some(StopReason::Extinct);
            on_generation(&state)?;
            break;
        };
        if !config.warm_start {
            let mut fresh = ParameterSet::init(
                &child.arch,
                &mut stream_rng(config.master_seed, g as u64, Stream::Init, 0),
            );
            for (f, c) in fresh.layers.iter_mut().zip(&child.params.layers) {
                f.mask.clone_from(&c.mask);
            }
            fresh.apply_masks();
            child.params = fresh;
        }
        train_with_stress(
            &child.arch,
            &mut child.params,
            train,
            config.epochs_per_generation,
            &config.train,
            &offspring_stress(config, g as u64, config.stress_offspring),
            &mut stream_rng(config.master_seed, g as u64, Stream::Shuffle, 0),
        )?;
        let err = evaluate(&child.arch, &child.params, test)?;
        let expected = env.expected_joint(&build_clusters(&state.parent.arch));
        let rec = record(
            config,
            g,
            &child,
            state.original_weights(),
            err,
            expected,
            started,
        );
        state.records.push(rec);
        state.generation = g;
        if (err - state.baseline_error()) * 100.0 > config.accuracy_budget {
            state.finished = Some(StopReason::BudgetExceeded);
        } else {
            state.best = state.records.len() - 1;
            state.best_net = child.clone();
            state.parent = child;
            state.dna = Some(env);
        }
        on_generation(&state)?;
    }

    Ok(EvolutionOutcome {
        lineage: Lineage {
            records: state.records,
            stop_reason: state.finished.expect("loop exits with a reason"),
            best: state.best,
        },
        baseline: state.baseline,
        best: state.best_net,
    })
}

/// Independent lineages, one per config, run in parallel. A failing lineage
/// does not affect the others.
pub fn factor_sweep(
    configs: &[EvolutionConfig],
    arch0: &NetworkArchitecture,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Vec<Result<EvolutionOutcome>> {
    configs
        .par_iter()
        .map(|cfg| evolve(cfg, arch0, train, test))
        .collect()
}

pub const LINEAGE_HEADER: [&str; 9] = [
    "generation",
    "descriptor",
    "params_total",
    "params_nonzero",
    "nonzero_ratio",
    "test_error",
    "model_size_bytes",
    "seed",
    "wall_seconds",
];

pub fn write_lineage_csv(records: &[GenerationRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LINEAGE_HEADER)?;
    for r in records {
        w.write_record([
            r.generation.to_string(),
            r.descriptor.clone(),
            r.params_total.to_string(),
            r.params_nonzero.to_string(),
            r.nonzero_ratio.to_string(),
            r.test_error.to_string(),
            r.model_size_bytes.to_string(),
            r.seed.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = row.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::Format(format!(
            "lineage column {} has bad value {raw:?}",
            LINEAGE_HEADER[i]
        ))
    })
}

pub fn read_lineage_csv(input: impl Read) -> Result<Vec<GenerationRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(LINEAGE_HEADER) {
        return Err(Error::Format(format!(
            "unexpected lineage header {header:?}"
        )));
    }
    r.records()
        .map(|row| {
            let row = row?;
            Ok(GenerationRecord {
                generation: field(&row, 0)?,
                descriptor: field(&row, 1)?,
                params_total: field(&row, 2)?,
                params_nonzero: field(&row, 3)?,
                nonzero_ratio: field(&row, 4)?,
                test_error: field(&row, 5)?,
                model_size_bytes: field(&row, 6)?,
                seed: field(&row, 7)?,
                wall_seconds: field(&row, 8)?,
                expected_synapses: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(g: usize, err: f64) -> GenerationRecord {
        GenerationRecord {
            generation: g,
            descriptor: "20-50-800-500".into(),
            params_total: 430_500,
            params_nonzero: 1000 - g,
            nonzero_ratio: 0.1 / (g + 1) as f64,
            test_error: err,
            model_size_bytes: 1_722_064,
            seed: u64::MAX - g as u64,
            wall_seconds: 0.0,
            expected_synapses: None,
        }
    }

    #[test]
    fn lineage_csv_round_trips() {
        let records = vec![rec(0, 0.0091), rec(1, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_lineage_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "generation,descriptor,params_total,params_nonzero,nonzero_ratio,test_error,model_size_bytes,seed,wall_seconds\n0,20-50-800-500,"
        ));
        assert_eq!(read_lineage_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn bad_lineage_header_is_rejected() {
        assert!(matches!(
            read_lineage_csv("gen,descriptor\n0,x\n".as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn config_bounds() {
        assert!(EvolutionConfig::new(0.0, 0.9, 1).is_err());
        assert!(EvolutionConfig::new(0.8, 0.0, 1).is_err());
        let mut c = EvolutionConfig::new(0.8, 0.9, 1).unwrap();
        c.accuracy_budget = -1.0;
        assert!(c.validate().is_err());
        c.accuracy_budget = 0.0;
        c.epochs_per_generation = 0;
        assert!(c.validate().is_err());
    }
}
