//! `stressnet` command-line driver.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigIssue, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "stressnet",
    version,
    about = "Stress-induced evolutionary synthesis experiments"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML experiment config; missing keys take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "F")]
    factor: Option<f64>,
    #[arg(long, global = true, value_name = "B")]
    beta: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    generations: Option<usize>,
    /// Epochs per generation.
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,
    /// Accuracy budget in percentage points.
    #[arg(long, global = true, value_name = "PTS")]
    budget: Option<f64>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the generation-0 baseline only.
    Train,
    /// Run one lineage.
    Evolve {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// One lineage per factor in `sweep_factors`, each in its own subdirectory.
    Sweep,
    /// Test error of a checkpointed network.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// 1-NN feature study: checkpointed network vs its baseline vs PCA.
    Features {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Summary of a lineage CSV.
    Report {
        #[arg(long, value_name = "PATH")]
        lineage: Option<PathBuf>,
        /// Extra generations to list, comma separated.
        #[arg(long, value_delimiter = ',', value_name = "G,G")]
        at: Vec<usize>,
    },
}

/// Reason a run stopped; printed as one `key=value` line per problem.
#[derive(Debug)]
pub enum Failure {
    Config(Vec<ConfigIssue>),
    Run(stressnet::Error),
}

impl From<stressnet::Error> for Failure {
    fn from(e: stressnet::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl Failure {
    pub(crate) fn lines(&self) -> Vec<String> {
        match self {
            Failure::Config(issues) => issues
                .iter()
                .map(|i| format!("error kind=config key={} message={:?}", i.key, i.message))
                .collect(),
            Failure::Run(e) => vec![format!(
                "error kind={} message={:?}",
                e.kind(),
                e.to_string()
            )],
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 1,
        }
    }
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| {
                Failure::Config(vec![ConfigIssue {
                    key: "config",
                    message: format!("{}: {}", path.display(), e.message()),
                }])
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.factor {
        cfg.factor = v;
    }
    if let Some(v) = o.beta {
        cfg.beta = v;
    }
    if let Some(v) = o.generations {
        cfg.max_generations = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs_per_generation = v;
    }
    if let Some(v) = o.budget {
        cfg.accuracy_budget = v;
    }
    if let Some(v) = &o.out {
        cfg.out_dir.clone_from(v);
    }
    if let Some(v) = &o.dataset {
        cfg.dataset_dir.clone_from(v);
    }
    let issues = cfg.validate();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Failure::Config(issues))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.overrides)?;
    match &cli.command {
        Command::Train => commands::train(&cfg),
        Command::Evolve { resume } => commands::evolve(&cfg, resume.as_deref()),
        Command::Sweep => commands::sweep(&cfg),
        Command::Eval { checkpoint } => commands::eval(&cfg, checkpoint.as_deref()),
        Command::Features { checkpoint } => commands::features(&cfg, checkpoint.as_deref()),
        Command::Report { lineage, at } => commands::report(&cfg, lineage.as_deref(), at),
    }
}

pub(crate) fn write_failure_report(dir: &Path, lines: &[String]) {
    if fs::create_dir_all(dir).is_ok() {
        // best effort: the error is already on stderr
        let _ = fs::write(dir.join("failure.txt"), lines.join("\n") + "\n");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let lines = f.lines();
            for l in &lines {
                eprintln!("{l}");
            }
            if let Some(out) = cli
                .overrides
                .out
                .clone()
                .or_else(|| load_config(&cli.overrides).ok().map(|c| c.out_dir))
            {
                write_failure_report(&out, &lines);
            }
            ExitCode::from(f.exit_code())
        }
    }
}
