use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcsurv::calibration::{DistanceKind, DEFAULT_ECE_BINS};
use mcsurv::commands::{
    cmd_compare, cmd_counterexample, cmd_evaluate, cmd_ingest, cmd_synthesize, cmd_train, CompareArgs, CompareMetric,
    CounterexampleArgs, EvaluateArgs, IngestArgs, SynthArgs, TrainArgs, TrainMode,
};
use mcsurv::data::{DiscretizeStrategy, SyntheticConfig, TableId};
use mcsurv::estimators::DEFAULT_SIGNIFICANCE;
use mcsurv::metrics::EvalConfig;
use mcsurv::model::{Architecture, DEFAULT_HIDDEN};
use mcsurv::trainer::TrainerConfig;
use mcsurv::Result;

#[derive(Parser)]
#[command(name = "mcsurv", version, about = "Multicalibrated discrete-time survival models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, discretize and split a delimited table.
    Ingest(IngestCli),
    /// Generate a synthetic cohort from a JSON config and split it.
    Synth(SynthCli),
    /// Train a constrained model or one of the baselines.
    Train(TrainCli),
    /// Per-subgroup calibration and discrimination report.
    Evaluate(EvaluateCli),
    /// Reproduce one of the metric counterexamples (dcal, brier, rps).
    Counterexample(CounterexampleCli),
    /// Paired t-test wins-losses-draws across evaluated runs.
    Compare(CompareCli),
}

fn parse_split(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

#[derive(Args)]
struct IngestCli {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "time")]
    time_column: String,
    #[arg(long, default_value = "event")]
    event_column: String,
    /// Numeric feature columns.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Categorical feature columns.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long, default_value_t = 102)]
    tau: usize,
    #[arg(long, default_value = "quantile")]
    strategy: DiscretizeStrategy,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_split)]
    split: (f64, f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthCli {
    /// JSON synthetic cohort config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_split)]
    split: (f64, f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCli {
    /// Directory holding train/validation/test splits.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "graduate")]
    mode: TrainMode,
    #[arg(long, default_value = "mlp_time")]
    arch: Architecture,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    /// Z-score numeric features with train statistics.
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value = "l2")]
    distance: DistanceKind,
    /// Slack for every constraint.
    #[arg(long, default_value_t = 0.01)]
    c: f64,
    /// Per-subgroup slack overrides, lines of `name,c`.
    #[arg(long)]
    c_file: Option<PathBuf>,
    #[arg(long)]
    subgroups: Option<PathBuf>,
    #[arg(long)]
    auto_subgroups: bool,
    #[arg(long, default_value_t = 100)]
    min_size: usize,
    #[arg(long, default_value_t = 0.8)]
    max_overlap: f64,
    #[arg(long, default_value_t = 3)]
    max_arity: usize,
    /// RPS weight for `--mode rps`.
    #[arg(long, default_value_t = 1.0)]
    rps_lambda: f64,
    /// JSON trainer config; explicit flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

impl TrainCli {
    fn trainer_config(&self) -> Result<TrainerConfig> {
        let mut cfg: TrainerConfig = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => TrainerConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        take!(eta, outer_iters, patience, inner_lr, batch_size, seed);
        if self.inner_steps.is_some() {
            cfg.inner_steps = self.inner_steps;
        }
        if self.momentum.is_some() {
            cfg.momentum = self.momentum;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateCli {
    /// Training run directory (model.txt, encoder.json, summary.json).
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Subgroup file; defaults to the run's constraint subgroups.
    #[arg(long)]
    subgroups: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
    significance: f64,
    /// Award half a concordant pair for tied predictions.
    #[arg(long)]
    half_credit: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CounterexampleCli {
    which: TableId,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareCli {
    /// Evaluation output directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "total_score")]
    metric: CompareMetric,
    #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
    significance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let m = cmd_ingest(&IngestArgs {
                input: a.input,
                time_column: a.time_column,
                event_column: a.event_column,
                features: a.features,
                categorical: a.categorical,
                delimiter: a.delimiter,
                tau: a.tau,
                strategy: a.strategy,
                split: a.split,
                seed: a.seed,
                out: a.out.clone(),
            })?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), a.out.display());
        }
        Command::Synth(a) => {
            let config: SyntheticConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
            let m = cmd_synthesize(&SynthArgs {
                config,
                split: a.split,
                seed: a.seed,
                out: a.out.clone(),
            })?;
            println!("wrote {} artifacts to {}", m.artifacts.len(), a.out.display());
        }
        Command::Train(a) => {
            let trainer = a.trainer_config()?;
            cmd_train(&TrainArgs {
                data_dir: a.input,
                mode: a.mode,
                arch: a.arch,
                hidden: a.hidden,
                standardize: a.standardize,
                distance: a.distance,
                c: a.c,
                c_file: a.c_file,
                subgroup_file: a.subgroups,
                auto_subgroups: a.auto_subgroups,
                min_size: a.min_size,
                max_overlap: a.max_overlap,
                max_arity: a.max_arity,
                rps_lambda: a.rps_lambda,
                trainer,
                out: a.out.clone(),
            })?;
            print!("{}", fs::read_to_string(a.out.join("summary.json"))?);
            println!();
        }
        Command::Evaluate(a) => {
            cmd_evaluate(&EvaluateArgs {
                run_dir: a.model,
                data_dir: a.input,
                split: a.split,
                subgroup_file: a.subgroups,
                eval: EvalConfig {
                    bins: a.bins,
                    significance: a.significance,
                    half_credit: a.half_credit,
                },
                out: a.out.clone(),
            })?;
            print!("{}", fs::read_to_string(a.out.join("report.txt"))?);
        }
        Command::Counterexample(a) => {
            cmd_counterexample(&CounterexampleArgs { table: a.which, out: a.out.clone() })?;
            print!("{}", fs::read_to_string(a.out.join("summary.txt"))?);
        }
        Command::Compare(a) => {
            let table = cmd_compare(&CompareArgs {
                runs: a.runs,
                metric: a.metric,
                significance: a.significance,
                out: a.out,
            })?;
            print!("{}", table.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
