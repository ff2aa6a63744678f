//! Command implementations behind the `mcsurv` binary. Each command writes
//! its artifacts plus a `manifest.json` into an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{ConstraintSpec, DistanceKind};
use crate::data::{
    counterexample_dataset, discretize, generate_synthetic, parse_table, read_dataset, split, write_dataset,
    DiscreteDataset, DiscretizeStrategy, FeatureEncoder, SplitSpec, SyntheticConfig, TableId, TableSchema,
};
use crate::error::{Result, SurvError};
use crate::estimators::{censoring_km, km_curve};
use crate::losses::{brier_from_curves, dcal_from_curves, rps_on_curves};
use crate::metrics::{compare, evaluate, ComparisonTable, EvalConfig, EvaluationReport, ReportRow};
use crate::model::{mean_curve, Architecture, HazardModel, DEFAULT_CLAMP_EPSILON};
use crate::subgroups::{auto_select, build_constraint_set, parse_subgroup_file, write_subgroup_file, SubgroupSpec};
use crate::trainer::{
    baseline_train, history_csv, mu_trajectory_probe, prepare_constraints, primal_dual_train, BaselineMode, Cohort,
    TrainerConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance record for one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path -> sha256.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Artifact path relative to the run directory -> sha256.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub version: String,
}

struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    out: PathBuf,
    artifacts: Vec<String>,
    started_unix: u64,
    clock: Instant,
}

impl ManifestBuilder {
    fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            seed,
            out: out.to_path_buf(),
            artifacts: Vec::new(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn finish(self) -> Result<RunManifest> {
        let artifacts = self
            .artifacts
            .iter()
            .map(|a| Ok((a.clone(), hash_file(&self.out.join(a))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            seed: self.seed,
            artifacts,
            started_unix: self.started_unix,
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        fs::write(self.out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
}

/// Recomputes every artifact hash listed in the directory's manifest.
pub fn verify_manifest(dir: &Path) -> Result<()> {
    let m = read_manifest(dir)?;
    for (name, hash) in &m.artifacts {
        let got = hash_file(&dir.join(name))?;
        if &got != hash {
            return Err(SurvError::CorruptArtifact(format!("{name}: hash {got} does not match manifest")));
        }
    }
    Ok(())
}

fn write_splits(
    builder: &mut ManifestBuilder,
    dataset: &DiscreteDataset,
    spec: &SplitSpec,
    strategy: Option<DiscretizeStrategy>,
) -> Result<()> {
    let (train, val, test) = split(dataset, spec)?;
    for (name, part) in SPLIT_NAMES.iter().zip([&train, &val, &test]) {
        let file = format!("{name}.csv");
        write_dataset(part, &builder.out.join(&file), strategy, Some(spec.seed))?;
        builder.artifacts.push(file.clone());
        builder.artifacts.push(format!("{name}.meta.json"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestArgs {
    pub input: PathBuf,
    pub time_column: String,
    pub event_column: String,
    pub features: Vec<String>,
    pub categorical: Vec<String>,
    pub delimiter: char,
    pub tau: usize,
    pub strategy: DiscretizeStrategy,
    pub split: (f64, f64, f64),
    pub seed: u64,
    pub out: PathBuf,
}

/// Parse, discretize and split a raw table into `train/validation/test.csv`.
pub fn cmd_ingest(args: &IngestArgs) -> Result<RunManifest> {
    let mut schema = TableSchema::new(&args.time_column, &args.event_column);
    schema.feature_columns = args.features.clone();
    schema.categorical_columns = args.categorical.clone();
    schema.delimiter = u8::try_from(args.delimiter)
        .map_err(|_| SurvError::InvalidConfig(format!("delimiter `{}` is not a single byte", args.delimiter)))?;
    let spec = SplitSpec::new(args.split.0, args.split.1, args.split.2, args.seed)?;
    let raw = parse_table(&args.input, &schema)?;
    let dataset = discretize(&raw, args.tau, args.strategy)?;
    let mut b = ManifestBuilder::new("ingest", args, Some(args.seed), &args.out)?;
    b.input(&args.input)?;
    write_splits(&mut b, &dataset, &spec, Some(args.strategy))?;
    b.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    pub config: SyntheticConfig,
    pub split: (f64, f64, f64),
    pub seed: u64,
    pub out: PathBuf,
}

/// Generate a synthetic cohort and split it like `cmd_ingest`.
pub fn cmd_synthesize(args: &SynthArgs) -> Result<RunManifest> {
    let spec = SplitSpec::new(args.split.0, args.split.1, args.split.2, args.seed)?;
    let dataset = generate_synthetic(&args.config, args.seed)?;
    let mut b = ManifestBuilder::new("synth", args, Some(args.seed), &args.out)?;
    write_splits(&mut b, &dataset, &spec, None)?;
    b.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Graduate,
    Drsa,
    Rps,
}

impl std::str::FromStr for TrainMode {
    type Err = SurvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graduate" => Ok(TrainMode::Graduate),
            "drsa" => Ok(TrainMode::Drsa),
            "rps" | "drsa_rps" => Ok(TrainMode::Rps),
            other => Err(SurvError::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    pub data_dir: PathBuf,
    pub mode: TrainMode,
    pub arch: Architecture,
    pub hidden: usize,
    pub standardize: bool,
    pub distance: DistanceKind,
    pub c: f64,
    /// Per-subgroup slack overrides, lines of `name,c`.
    pub c_file: Option<PathBuf>,
    pub subgroup_file: Option<PathBuf>,
    pub auto_subgroups: bool,
    pub min_size: usize,
    pub max_overlap: f64,
    pub max_arity: usize,
    pub rps_lambda: f64,
    pub trainer: TrainerConfig,
    pub out: PathBuf,
}

/// Written next to the trained model; read back by `cmd_evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub system: String,
    pub seed: u64,
    pub selected_iteration: usize,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub constraints: Vec<ConstraintSpec>,
}

pub fn system_label(mode: TrainMode, distance: DistanceKind) -> String {
    match (mode, distance) {
        (TrainMode::Graduate, DistanceKind::L2) => "graduate-l2".into(),
        (TrainMode::Graduate, DistanceKind::VarianceAdjusted) => "graduate-var".into(),
        (TrainMode::Drsa, _) => "drsa".into(),
        (TrainMode::Rps, _) => "drsa-rps".into(),
    }
}

fn parse_c_file(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, c) = line
            .rsplit_once(',')
            .ok_or_else(|| SurvError::Parse(format!("line {}: expected `name,c`", i + 1)))?;
        let c: f64 = c
            .trim()
            .parse()
            .map_err(|_| SurvError::Parse(format!("line {}: bad slack `{}`", i + 1, c.trim())))?;
        out.insert(name.trim().to_string(), c);
    }
    Ok(out)
}

fn load_split(dir: &Path, name: &str) -> Result<DiscreteDataset> {
    read_dataset(&dir.join(format!("{name}.csv")))
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    args.trainer.validate()?;
    let train = load_split(&args.data_dir, "train")?;
    let validation = load_split(&args.data_dir, "validation")?;
    let mut b = ManifestBuilder::new("train", args, Some(args.trainer.seed), &args.out)?;
    for name in ["train", "validation"] {
        b.input(&args.data_dir.join(format!("{name}.csv")))?;
    }

    let constraint_flags = args.subgroup_file.is_some() || args.auto_subgroups || args.c_file.is_some();
    if args.mode != TrainMode::Graduate && constraint_flags {
        eprintln!("warning: {:?} mode ignores subgroup and slack flags", args.mode);
    }
    let constraints = if args.mode == TrainMode::Graduate {
        if args.subgroup_file.is_none() && !args.auto_subgroups {
            return Err(SurvError::InvalidConfig(
                "graduate mode needs --subgroups or --auto-subgroups".into(),
            ));
        }
        let manual = match &args.subgroup_file {
            Some(p) => {
                b.input(p)?;
                parse_subgroup_file(&fs::read_to_string(p)?)?
            }
            None => Vec::new(),
        };
        let auto = if args.auto_subgroups {
            auto_select(&train, args.min_size, args.max_overlap, args.max_arity)?
        } else {
            Vec::new()
        };
        let overrides = match &args.c_file {
            Some(p) => {
                b.input(p)?;
                parse_c_file(&fs::read_to_string(p)?)?
            }
            None => BTreeMap::new(),
        };
        build_constraint_set(&manual, &auto, args.c, args.distance, &overrides)?
    } else {
        Vec::new()
    };

    let encoder = FeatureEncoder::fit(&train, args.standardize);
    let init = HazardModel::init(
        args.arch,
        encoder.dim(),
        train.tau,
        args.hidden,
        DEFAULT_CLAMP_EPSILON,
        args.trainer.seed,
    )?;
    let train_c = Cohort::encode(&train, &encoder);
    let val_c = Cohort::encode(&validation, &encoder);
    let outcome = match args.mode {
        TrainMode::Graduate => {
            let prepared = prepare_constraints(&constraints, &train, &validation)?;
            primal_dual_train(init, &train_c, &val_c, &prepared, &args.trainer)?
        }
        TrainMode::Drsa => baseline_train(init, &train_c, &val_c, BaselineMode::Drsa, &args.trainer)?,
        TrainMode::Rps => baseline_train(init, &train_c, &val_c, BaselineMode::DrsaRps(args.rps_lambda), &args.trainer)?,
    };

    let summary = TrainSummary {
        system: system_label(args.mode, args.distance),
        seed: args.trainer.seed,
        selected_iteration: outcome.selected_iteration,
        iterations_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        constraints: constraints.clone(),
    };
    let subgroups: Vec<SubgroupSpec> = constraints.iter().map(|c| c.subgroup.clone()).collect();
    b.write("model.txt", outcome.model.serialize())?;
    b.write("encoder.json", serde_json::to_string_pretty(&encoder)?)?;
    b.write("subgroups.txt", write_subgroup_file(&subgroups))?;
    b.write("history.csv", history_csv(&outcome.history))?;
    b.write("mu_trajectory.csv", mu_trajectory_probe(&outcome))?;
    b.write("summary.json", serde_json::to_string_pretty(&summary)?)?;
    b.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    pub run_dir: PathBuf,
    pub data_dir: PathBuf,
    pub split: String,
    /// Defaults to the run's constraint subgroups.
    pub subgroup_file: Option<PathBuf>,
    pub eval: EvalConfig,
    pub out: PathBuf,
}

/// Report plus the run identity, as consumed by `cmd_compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub system: String,
    pub seed: u64,
    pub report: EvaluationReport,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<RunManifest> {
    let model_path = args.run_dir.join("model.txt");
    let model = HazardModel::deserialize(&fs::read_to_string(&model_path)?)?;
    let encoder: FeatureEncoder = serde_json::from_str(&fs::read_to_string(args.run_dir.join("encoder.json"))?)?;
    let summary: TrainSummary = serde_json::from_str(&fs::read_to_string(args.run_dir.join("summary.json"))?)?;
    let data_path = args.data_dir.join(format!("{}.csv", args.split));
    let dataset = read_dataset(&data_path)?;

    let mut b = ManifestBuilder::new("evaluate", args, Some(summary.seed), &args.out)?;
    b.input(&model_path)?;
    b.input(&data_path)?;
    let subgroups = match &args.subgroup_file {
        Some(p) => {
            b.input(p)?;
            parse_subgroup_file(&fs::read_to_string(p)?)?
        }
        None => summary.constraints.iter().map(|c| c.subgroup.clone()).collect(),
    };
    let mut report = evaluate(&model, &encoder, &dataset, &subgroups, &args.eval)?;
    report.dataset_id = hash_file(&data_path)?;
    report.model_id = hash_file(&model_path)?;

    b.write("report.csv", report.to_csv()?)?;
    b.write("report.txt", report.to_table())?;
    b.write("plot_data.csv", report.plot_data())?;
    let record = EvaluationRecord {
        system: summary.system,
        seed: summary.seed,
        report,
    };
    b.write("evaluation.json", serde_json::to_string_pretty(&record)?)?;
    b.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleSummary {
    pub table: String,
    pub metric: String,
    /// One value, or one per `t = 1..=5` for the Brier score.
    pub metric_values: Vec<f64>,
    pub predicted_marginal_s5: f64,
    pub km_s5: f64,
}

/// Hand-specified predicted curves for each counterexample cohort.
pub fn counterexample_curves(table: TableId) -> Vec<Vec<f64>> {
    let dataset = counterexample_dataset(table);
    let tau = dataset.tau;
    match table {
        TableId::Dcal => {
            // straight line from S(0) = 1 down to the stated S(t_i), flat after
            let targets = [0.15, 0.35, 0.55, 0.75, 0.95];
            dataset
                .records
                .iter()
                .zip(targets)
                .map(|(r, s_t)| {
                    (0..=tau)
                        .map(|t| {
                            if t >= r.time {
                                s_t
                            } else {
                                1.0 - (1.0 - s_t) * t as f64 / r.time as f64
                            }
                        })
                        .collect()
                })
                .collect()
        }
        TableId::Brier => dataset
            .records
            .iter()
            .map(|r| (0..=tau).map(|t| if t < r.time { 1.0 } else { 0.0 }).collect())
            .collect(),
        TableId::Rps => dataset
            .records
            .iter()
            .map(|r| {
                (0..=tau)
                    .map(|t| if !r.event || t < r.time { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    }
}

/// The metric, marginal predicted S(5) and KM S(5) for one counterexample.
pub fn counterexample_summary(table: TableId) -> Result<CounterexampleSummary> {
    let dataset = counterexample_dataset(table);
    let outcomes = dataset.outcomes();
    let curves = counterexample_curves(table);
    let km = km_curve(&outcomes, dataset.tau)?;
    let (metric, metric_values) = match table {
        TableId::Dcal => ("d_calibration", vec![dcal_from_curves(&curves, &outcomes, 5, None)?]),
        TableId::Brier => {
            let g = censoring_km(&outcomes, dataset.tau)?;
            let values = (1..=dataset.tau)
                .map(|t| brier_from_curves(&curves, &outcomes, t, &g, DEFAULT_CLAMP_EPSILON).map(|b| b.value))
                .collect::<Result<Vec<_>>>()?;
            ("brier", values)
        }
        TableId::Rps => ("rps", vec![rps_on_curves(&curves, &outcomes)]),
    };
    Ok(CounterexampleSummary {
        table: table.name().to_string(),
        metric: metric.to_string(),
        metric_values,
        predicted_marginal_s5: mean_curve(&curves)[5],
        km_s5: km.values[5],
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleArgs {
    pub table: TableId,
    pub out: PathBuf,
}

pub fn cmd_counterexample(args: &CounterexampleArgs) -> Result<(CounterexampleSummary, RunManifest)> {
    let summary = counterexample_summary(args.table)?;
    let dataset = counterexample_dataset(args.table);
    let curves = counterexample_curves(args.table);
    let km = km_curve(&dataset.outcomes(), dataset.tau)?;
    let marginal = mean_curve(&curves);

    let mut b = ManifestBuilder::new("counterexample", args, None, &args.out)?;
    let mut per_individual = String::from("id,time,event,t,S\n");
    for (r, c) in dataset.records.iter().zip(&curves) {
        for (t, s) in c.iter().enumerate() {
            per_individual.push_str(&format!("{},{},{},{t},{s:?}\n", r.features[0], r.time, u8::from(r.event)));
        }
    }
    let mut overlay = String::from("t,predicted_marginal,km\n");
    for t in 0..=dataset.tau {
        overlay.push_str(&format!("{t},{:?},{:?}\n", marginal[t], km.values[t]));
    }
    let curve_note = if args.table == TableId::Dcal {
        " (illustrative reconstruction: piecewise-linear through the stated S(t_i))"
    } else {
        ""
    };
    let text = format!(
        "table {}\n{} = {:?}\npredicted marginal S(5) = {:.4}{curve_note}\nKaplan-Meier S(5) = {:.4}\n",
        summary.table, summary.metric, summary.metric_values, summary.predicted_marginal_s5, summary.km_s5
    );
    b.write("curves.csv", per_individual)?;
    b.write("marginal_vs_km.csv", overlay)?;
    b.write("summary.json", serde_json::to_string_pretty(&summary)?)?;
    b.write("summary.txt", &text)?;
    Ok((summary, b.finish()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMetric {
    CIndex,
    Ece,
    TotalScore,
    L2Distance,
    VarDistance,
}

impl CompareMetric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, CompareMetric::CIndex | CompareMetric::TotalScore)
    }

    fn get(self, row: &ReportRow) -> Option<f64> {
        match self {
            CompareMetric::CIndex => row.c_index,
            CompareMetric::Ece => row.ece,
            CompareMetric::TotalScore => row.total_score,
            CompareMetric::L2Distance => row.l2_distance,
            CompareMetric::VarDistance => row.var_distance,
        }
    }
}

impl std::str::FromStr for CompareMetric {
    type Err = SurvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "c_index" | "cindex" => Ok(CompareMetric::CIndex),
            "ece" => Ok(CompareMetric::Ece),
            "total" | "total_score" => Ok(CompareMetric::TotalScore),
            "l2" | "l2_distance" => Ok(CompareMetric::L2Distance),
            "var" | "var_distance" => Ok(CompareMetric::VarDistance),
            other => Err(SurvError::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Evaluation output directories.
    pub runs: Vec<PathBuf>,
    pub metric: CompareMetric,
    pub significance: f64,
    pub out: Option<PathBuf>,
}

/// Groups evaluation records by system, pairs them by seed and counts
/// wins-losses-draws over the shared subgroup rows.
pub fn compare_records(records: &[EvaluationRecord], metric: CompareMetric, significance: f64) -> Result<ComparisonTable> {
    let mut by_system: BTreeMap<String, BTreeMap<u64, &EvaluationReport>> = BTreeMap::new();
    for r in records {
        if by_system.entry(r.system.clone()).or_default().insert(r.seed, &r.report).is_some() {
            return Err(SurvError::MisalignedRuns(format!("duplicate seed {} for {}", r.seed, r.system)));
        }
    }
    let seeds: Vec<Vec<u64>> = by_system.values().map(|m| m.keys().copied().collect()).collect();
    if seeds.iter().any(|s| s != &seeds[0]) {
        return Err(SurvError::MisalignedRuns("systems were run on different seeds".into()));
    }
    if seeds.first().is_none_or(|s| s.len() < 2) {
        return Err(SurvError::MisalignedRuns("need at least two runs per system".into()));
    }
    let mut runs = BTreeMap::new();
    for (system, reports) in &by_system {
        let mut keys: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let first = reports.values().next().expect("non-empty");
        for row in &first.rows {
            let values: Option<Vec<f64>> = reports
                .values()
                .map(|rep| rep.row(&row.name).and_then(|r| metric.get(r)))
                .collect();
            if let Some(v) = values {
                keys.insert(row.name.clone(), v);
            }
        }
        runs.insert(system.clone(), keys);
    }
    compare(&runs, significance, metric.higher_is_better())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<ComparisonTable> {
    let records = args
        .runs
        .iter()
        .map(|d| Ok(serde_json::from_str(&fs::read_to_string(d.join("evaluation.json"))?)?))
        .collect::<Result<Vec<EvaluationRecord>>>()?;
    let table = compare_records(&records, args.metric, args.significance)?;
    if let Some(out) = &args.out {
        let mut b = ManifestBuilder::new("compare", args, None, out)?;
        for d in &args.runs {
            b.input(&d.join("evaluation.json"))?;
        }
        b.write("comparison.txt", table.to_table())?;
        b.write("comparison.json", serde_json::to_string_pretty(&table)?)?;
        b.finish()?;
    }
    Ok(table)
}
