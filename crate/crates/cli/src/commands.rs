use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use stressnet::analysis::{extract_features, knn1_report, ClassAccuracyReport, Pca};
use stressnet::evolution::{
    evolve_with, read_lineage_csv, write_lineage_csv, EvolutionOutcome, GenerationRecord,
};
use stressnet::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LineageSection};
use stressnet::io::idx::{load_mnist, Split};
use stressnet::nn::evaluate;
use stressnet::{Error, LabeledDataset};

use crate::config::ExperimentConfig;
use crate::Failure;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const LINEAGE_CSV: &str = "lineage.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const RUNNING_CHECKPOINT: &str = "checkpoint.ckpt";

fn prepare_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml())?;
    Ok(())
}

fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset), Failure> {
    let mut train = load_mnist(&cfg.dataset_dir, Split::Train)?;
    if cfg.train_samples > 0 && cfg.train_samples < train.len() {
        train = train.head(cfg.train_samples);
    }
    let test = load_mnist(&cfg.dataset_dir, Split::Test)?;
    Ok((train, test))
}

fn write_lineage(path: &Path, records: &[GenerationRecord]) -> Result<(), Failure> {
    write_lineage_csv(records, BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn final_checkpoint(cfg: &ExperimentConfig, out: &EvolutionOutcome) -> Checkpoint {
    let best = out.lineage.best_record();
    Checkpoint {
        generation: best.generation as u64,
        master_seed: cfg.seed,
        rng_counter: out.lineage.records.len() as u64,
        network: out.best.clone(),
        dna: None,
        lineage: Some(LineageSection {
            records: out.lineage.records.clone(),
            best: out.lineage.best,
            finished: Some(out.lineage.stop_reason),
            baseline: out.baseline.clone(),
            best_net: out.best.clone(),
        }),
    }
}

fn run_lineage(
    cfg: &ExperimentConfig,
    dir: &Path,
    data: &(LabeledDataset, LabeledDataset),
    resume: Option<&Path>,
) -> Result<EvolutionOutcome, Failure> {
    prepare_dir(dir, cfg)?;
    let evo = cfg.evolution()?;
    let state = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.master_seed != cfg.seed {
                return Err(Error::Usage(format!(
                    "checkpoint was written with seed {}, config has {}",
                    ck.master_seed, cfg.seed
                ))
                .into());
            }
            Some(ck.into_state()?)
        }
        None => None,
    };
    let lineage_path = dir.join(LINEAGE_CSV);
    let running = dir.join(RUNNING_CHECKPOINT);
    let out = evolve_with(&evo, &cfg.arch(), &data.0, &data.1, state, |s| {
        let r = s.records.last().expect("state holds the baseline");
        println!(
            "generation={} descriptor={} nonzero_ratio={:.6} test_error={:.4}",
            r.generation, r.descriptor, r.nonzero_ratio, r.test_error
        );
        save_checkpoint(&running, &Checkpoint::from_state(s, cfg.seed))?;
        write_lineage_csv(&s.records, BufWriter::new(File::create(&lineage_path)?))
    })?;
    write_lineage(&lineage_path, &out.lineage.records)?;
    save_checkpoint(dir.join(FINAL_CHECKPOINT), &final_checkpoint(cfg, &out))?;
    let best = out.lineage.best_record();
    println!(
        "done stop={} best_generation={} descriptor={} nonzero_ratio={:.6} test_error={:.4}",
        out.lineage.stop_reason.as_str(),
        best.generation,
        best.descriptor,
        best.nonzero_ratio,
        best.test_error
    );
    Ok(out)
}

pub fn train(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let cfg = ExperimentConfig {
        max_generations: 0,
        ..cfg.clone()
    };
    let data = load_data(&cfg)?;
    run_lineage(&cfg, &cfg.out_dir, &data, None).map(drop)
}

pub fn evolve(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<(), Failure> {
    let data = load_data(cfg)?;
    run_lineage(cfg, &cfg.out_dir, &data, resume).map(drop)
}

fn factor_dir(out: &Path, f: f64) -> PathBuf {
    out.join(format!("F{f}"))
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<(), Failure> {
    prepare_dir(&cfg.out_dir, cfg)?;
    let data = load_data(cfg)?;
    // each lineage writes only inside its own subdirectory
    let results: Vec<(f64, Result<EvolutionOutcome, Failure>)> = cfg
        .sweep_factors
        .par_iter()
        .map(|&f| {
            let sub = ExperimentConfig {
                factor: f,
                out_dir: factor_dir(&cfg.out_dir, f),
                ..cfg.clone()
            };
            let res = run_lineage(&sub, &sub.out_dir, &data, None);
            if let Err(e) = &res {
                crate::write_failure_report(&sub.out_dir, &e.lines());
            }
            (f, res)
        })
        .collect();
    let mut w = csv::Writer::from_path(cfg.out_dir.join("sweep.csv")).map_err(Error::from)?;
    w.write_record([
        "factor",
        "status",
        "generations",
        "best_generation",
        "nonzero_ratio",
        "test_error",
    ])
    .map_err(Error::from)?;
    let mut failed = None;
    for (f, res) in results {
        let row = match res {
            Ok(out) => {
                let b = out.lineage.best_record();
                [
                    f.to_string(),
                    out.lineage.stop_reason.as_str().to_string(),
                    (out.lineage.records.len() - 1).to_string(),
                    b.generation.to_string(),
                    b.nonzero_ratio.to_string(),
                    b.test_error.to_string(),
                ]
            }
            Err(e) => {
                let kind = match &e {
                    Failure::Run(err) => err.kind(),
                    Failure::Config(_) => "config",
                };
                failed.get_or_insert(e);
                [
                    f.to_string(),
                    kind.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]
            }
        };
        w.write_record(row).map_err(Error::from)?;
    }
    w.flush()?;
    match failed {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn checkpoint_path(cfg: &ExperimentConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| cfg.out_dir.join(FINAL_CHECKPOINT), Path::to_path_buf)
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let ck = load_checkpoint(checkpoint_path(cfg, checkpoint))?;
    let test = load_mnist(&cfg.dataset_dir, Split::Test)?;
    let net = &ck.network;
    let err = evaluate(&net.arch, &net.params, &test)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join("eval.csv")).map_err(Error::from)?;
    w.write_record([
        "generation",
        "descriptor",
        "params_nonzero",
        "test_error",
        "model_size_bytes",
    ])
    .map_err(Error::from)?;
    let size = stressnet::analysis::model_size_bytes(&net.arch);
    w.write_record([
        ck.generation.to_string(),
        net.arch.descriptor(),
        net.params.nonzero_count().to_string(),
        err.to_string(),
        size.to_string(),
    ])
    .map_err(Error::from)?;
    w.flush()?;
    println!(
        "generation={} descriptor={} test_error={err:.4} model_size_bytes={size}",
        ck.generation,
        net.arch.descriptor()
    );
    Ok(())
}

fn write_report(path: &Path, report: &ClassAccuracyReport) -> Result<(), Failure> {
    report.write_csv(BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn features(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let ck = load_checkpoint(checkpoint_path(cfg, checkpoint))?;
    let lin = ck
        .lineage
        .as_ref()
        .ok_or_else(|| Error::Usage("features needs a checkpoint with a lineage section".into()))?;
    let (train, test) = load_data(cfg)?;
    let classes = ck.network.arch.num_classes;
    let reference =
        train.sample_per_class(cfg.feature_samples_per_class, classes, cfg.feature_seed);

    let feats = |net: &stressnet::evolution::Individual| -> Result<_, Failure> {
        let layer = net
            .arch
            .feature_layer()
            .ok_or_else(|| Error::Usage("network has no hidden fully connected layer".into()))?;
        Ok((
            extract_features(&net.arch, &net.params, &reference, layer)?,
            extract_features(&net.arch, &net.params, &test, layer)?,
        ))
    };
    let (base_tr, base_te) = feats(&lin.baseline)?;
    let (net_tr, net_te) = feats(&ck.network)?;
    let pca = Pca::fit(&base_tr, net_tr.dim())?;
    let (pca_tr, pca_te) = (pca.transform(&base_tr)?, pca.transform(&base_te)?);

    fs::create_dir_all(&cfg.out_dir)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join("features.csv")).map_err(Error::from)?;
    w.write_record(["model", "dimension", "total_accuracy"])
        .map_err(Error::from)?;
    for (name, tr, te) in [
        ("baseline", &base_tr, &base_te),
        ("stressednet", &net_tr, &net_te),
        ("pca", &pca_tr, &pca_te),
    ] {
        let report = knn1_report(tr, te)?;
        write_report(&cfg.out_dir.join(format!("knn_{name}.csv")), &report)?;
        w.write_record([
            name.to_string(),
            tr.dim().to_string(),
            format!("{:.6}", report.total),
        ])
        .map_err(Error::from)?;
        println!(
            "model={name} dimension={} total_accuracy={:.4}",
            tr.dim(),
            report.total
        );
    }
    w.flush()?;
    Ok(())
}

pub fn report(cfg: &ExperimentConfig, lineage: Option<&Path>, at: &[usize]) -> Result<(), Failure> {
    let path = lineage.map_or_else(|| cfg.out_dir.join(LINEAGE_CSV), Path::to_path_buf);
    let records = read_lineage_csv(File::open(&path)?)?;
    let Some(base) = records.first() else {
        return Err(Error::Format(format!("{} has no rows", path.display())).into());
    };
    let within =
        |r: &GenerationRecord| (r.test_error - base.test_error) * 100.0 <= cfg.accuracy_budget;
    let best = records.iter().rev().find(|r| within(r)).unwrap_or(base);
    let last = records.last().unwrap_or(base);

    let mut rows: Vec<(&str, &GenerationRecord)> =
        vec![("baseline", base), ("best", best), ("last", last)];
    for &g in at {
        let r = records
            .iter()
            .find(|r| r.generation == g)
            .ok_or_else(|| Error::Usage(format!("generation {g} is not in {}", path.display())))?;
        rows.push(("selected", r));
    }
    let out_dir = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(out_dir.join("report.csv")).map_err(Error::from)?;
    w.write_record([
        "role",
        "generation",
        "descriptor",
        "nonzero_percent",
        "error_percent",
        "within_budget",
    ])
    .map_err(Error::from)?;
    println!(
        "{:<9} {:>4}  {:<24} {:>9} {:>7}",
        "role", "gen", "architecture", "w!=0 %", "error %"
    );
    for (role, r) in rows {
        let nz = format!("{:.3}", r.nonzero_ratio * 100.0);
        let er = format!("{:.2}", r.test_error * 100.0);
        println!(
            "{role:<9} {:>4}  {:<24} {nz:>9} {er:>7}",
            r.generation, r.descriptor
        );
        w.write_record([
            role.to_string(),
            r.generation.to_string(),
            r.descriptor.clone(),
            nz,
            er,
            within(r).to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}
