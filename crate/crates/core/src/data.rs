//! Survival records, ingestion, discretization onto the grid `{1, ..., tau}`,
//! reproducible splits and the synthetic cohorts used throughout the crate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};

/// One individual after discretization: covariates, observed timestep and
/// whether the event (rather than censoring) was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    pub time: usize,
    pub event: bool,
}

/// One individual before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub features: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

/// Label tables of the categorical features. Codes are the position of the
/// label in the (sorted) list.
pub type CategoricalMap = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub records: Vec<RawRecord>,
    pub feature_names: Vec<String>,
    pub categorical_map: CategoricalMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    pub records: Vec<SurvivalRecord>,
    pub tau: usize,
    pub feature_names: Vec<String>,
    pub categorical_map: CategoricalMap,
}

impl DiscreteDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn is_categorical(&self, name: &str) -> bool {
        self.categorical_map.contains_key(name)
    }

    /// `(time, event)` pairs in record order.
    pub fn outcomes(&self) -> Vec<(usize, bool)> {
        self.records.iter().map(|r| (r.time, r.event)).collect()
    }

    /// A new dataset holding the records selected by `mask`, same metadata.
    pub fn subset(&self, mask: &[bool]) -> DiscreteDataset {
        let records = self
            .records
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(r, _)| r.clone())
            .collect();
        self.with_records(records)
    }

    pub fn with_records(&self, records: Vec<SurvivalRecord>) -> DiscreteDataset {
        DiscreteDataset {
            records,
            tau: self.tau,
            feature_names: self.feature_names.clone(),
            categorical_map: self.categorical_map.clone(),
        }
    }
}

/// Column layout of a delimited input file.
#[derive(Debug, Clone, Default)]
pub struct TableSchema {
    pub time_column: String,
    pub event_column: String,
    /// Numeric covariates, in output order.
    pub feature_columns: Vec<String>,
    /// Categorical covariates, appended after the numeric ones.
    pub categorical_columns: Vec<String>,
    pub delimiter: u8,
}

impl TableSchema {
    pub fn new(time_column: &str, event_column: &str) -> Self {
        TableSchema {
            time_column: time_column.to_string(),
            event_column: event_column.to_string(),
            feature_columns: Vec::new(),
            categorical_columns: Vec::new(),
            delimiter: b',',
        }
    }
}

pub fn parse_table(path: &Path, schema: &TableSchema) -> Result<RawDataset> {
    let text = fs::read_to_string(path)?;
    parse_table_str(&text, schema)
}

pub fn parse_table_str(text: &str, schema: &TableSchema) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurvError::MissingColumn(name.to_string()))
    };
    let time_col = column(&schema.time_column)?;
    let event_col = column(&schema.event_column)?;
    let numeric_cols = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let cat_cols = schema
        .categorical_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(SurvError::EmptyDataset);
    }

    // Codes follow sorted label order so they do not depend on row order.
    let mut categorical_map = CategoricalMap::new();
    for (name, &col) in schema.categorical_columns.iter().zip(&cat_cols) {
        let mut labels: Vec<String> = rows.iter().map(|r| r[col].to_string()).collect();
        labels.sort();
        labels.dedup();
        categorical_map.insert(name.clone(), labels);
    }

    let numeric = |row: usize, name: &str, value: &str| -> Result<f64> {
        value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| SurvError::NonNumericValue {
                row,
                column: name.to_string(),
            })
    };

    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row_no = i + 1;
        let time = numeric(row_no, &schema.time_column, &row[time_col])?;
        if time < 0.0 {
            return Err(SurvError::NonNumericValue {
                row: row_no,
                column: schema.time_column.clone(),
            });
        }
        let event = match &row[event_col] {
            "0" | "0.0" => false,
            "1" | "1.0" => true,
            _ => return Err(SurvError::InvalidEventFlag(row_no)),
        };
        let mut features = Vec::with_capacity(numeric_cols.len() + cat_cols.len());
        for (name, &col) in schema.feature_columns.iter().zip(&numeric_cols) {
            features.push(numeric(row_no, name, &row[col])?);
        }
        for (name, &col) in schema.categorical_columns.iter().zip(&cat_cols) {
            let labels = &categorical_map[name];
            let code = labels.binary_search_by(|l| l.as_str().cmp(&row[col])).unwrap();
            features.push(code as f64);
        }
        records.push(RawRecord {
            features,
            time,
            event,
        });
    }

    let feature_names = schema
        .feature_columns
        .iter()
        .chain(&schema.categorical_columns)
        .cloned()
        .collect();
    Ok(RawDataset {
        records,
        feature_names,
        categorical_map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscretizeStrategy {
    Uniform,
    Quantile,
}

impl std::str::FromStr for DiscretizeStrategy {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "quantile" => Ok(Self::Quantile),
            other => Err(SurvError::Parse(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Maps continuous times onto bins `1..=tau`. A time of exactly zero lands in bin 1.
pub fn discretize(raw: &RawDataset, tau: usize, strategy: DiscretizeStrategy) -> Result<DiscreteDataset> {
    if tau == 0 {
        return Err(SurvError::InvalidDims("tau must be at least 1".into()));
    }
    if raw.records.is_empty() {
        return Err(SurvError::EmptyDataset);
    }
    let times: Vec<f64> = raw.records.iter().map(|r| r.time).collect();
    let bins = match strategy {
        DiscretizeStrategy::Uniform => uniform_bins(&times, tau),
        DiscretizeStrategy::Quantile => quantile_bins(&times, tau)?,
    };
    let records = raw
        .records
        .iter()
        .zip(bins)
        .map(|(r, time)| SurvivalRecord {
            features: r.features.clone(),
            time,
            event: r.event,
        })
        .collect();
    Ok(DiscreteDataset {
        records,
        tau,
        feature_names: raw.feature_names.clone(),
        categorical_map: raw.categorical_map.clone(),
    })
}

fn uniform_bins(times: &[f64], tau: usize) -> Vec<usize> {
    let max = times.iter().cloned().fold(0.0_f64, f64::max);
    times
        .iter()
        .map(|&t| {
            if max <= 0.0 {
                return 1;
            }
            let b = (t * tau as f64 / max).ceil() as usize;
            b.clamp(1, tau)
        })
        .collect()
}

fn quantile_bins(times: &[f64], tau: usize) -> Result<Vec<usize>> {
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Err(SurvError::DegenerateTimes);
    }
    // Inverted-CDF (type 1) quantile for k/tau, k = 1..tau-1.
    let edges: Vec<f64> = (1..tau)
        .map(|k| {
            let idx = ((k * n) as f64 / tau as f64).ceil() as usize;
            sorted[idx.clamp(1, n) - 1]
        })
        .collect();
    Ok(times
        .iter()
        .map(|&t| 1 + edges.iter().filter(|&&e| t > e).count())
        .collect())
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            fractions: (train, validation, test),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-12 {
            return Err(SurvError::InvalidSplit(format!(
                "fractions ({a}, {b}, {c}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Sizes of the three parts: validation and test get `floor(n * f)`, train the rest.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    let part = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let val = part(spec.fractions.1);
    let test = part(spec.fractions.2);
    (n - val - test, val, test)
}

/// Seeded disjoint partition. Each part keeps the original record order.
pub fn split(
    dataset: &DiscreteDataset,
    spec: &SplitSpec,
) -> Result<(DiscreteDataset, DiscreteDataset, DiscreteDataset)> {
    spec.validate()?;
    let n = dataset.len();
    let (n_train, n_val, _) = split_sizes(n, spec);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        dataset.with_records(idx.iter().map(|&i| dataset.records[i].clone()).collect())
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableId {
    Dcal,
    Brier,
    Rps,
}

impl std::str::FromStr for TableId {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcal" => Ok(TableId::Dcal),
            "brier" => Ok(TableId::Brier),
            "rps" => Ok(TableId::Rps),
            other => Err(SurvError::UnknownTableId(other.to_string())),
        }
    }
}

impl TableId {
    pub fn name(self) -> &'static str {
        match self {
            TableId::Dcal => "dcal",
            TableId::Brier => "brier",
            TableId::Rps => "rps",
        }
    }
}

/// The small hand-built cohorts that expose the blind spots of D-Calibration,
/// the Brier score and RPS. Time horizon is 5; each individual's single
/// feature is its 1-based id.
pub fn counterexample_dataset(table: TableId) -> DiscreteDataset {
    let mut outcomes: Vec<(usize, bool)> = (1..=5).map(|t| (t, true)).collect();
    match table {
        TableId::Dcal => {}
        TableId::Brier => {
            outcomes.extend((1..=5).map(|t| (t, false)));
            outcomes.extend((1..=5).map(|t| (t, false)));
        }
        TableId::Rps => {
            outcomes.extend([1, 1, 1, 1, 2, 2, 2, 3, 3, 3].iter().map(|&t| (t, false)));
        }
    }
    let records = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, (time, event))| SurvivalRecord {
            features: vec![(i + 1) as f64],
            time,
            event,
        })
        .collect();
    DiscreteDataset {
        records,
        tau: 5,
        feature_names: vec!["id".into()],
        categorical_map: CategoricalMap::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroup {
    pub name: String,
    /// Share of the cohort; shares are normalized.
    pub weight: f64,
    /// Per-step geometric hazard in (0, 1).
    pub hazard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    /// Number of uninformative continuous covariates added next to the group code.
    pub noise_features: usize,
    pub groups: Vec<SyntheticGroup>,
    /// Probability that an individual is subject to censoring; its censoring
    /// time is then uniform on `1..=tau`.
    pub censoring_rate: f64,
    pub tau: usize,
}

/// The latent draws behind one synthetic record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDraw {
    pub group: usize,
    /// `None` when the geometric draw falls after `tau`.
    pub event_time: Option<usize>,
    pub censor_time: Option<usize>,
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<DiscreteDataset> {
    generate_synthetic_with_draws(config, seed).map(|(d, _)| d)
}

/// Synthetic cohort with geometric event times per group and independent
/// censoring. Follow-up ends at `tau`: anyone still event-free then is
/// censored at `tau`. Features are `[group, x1, ..., xk]`.
pub fn generate_synthetic_with_draws(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(DiscreteDataset, Vec<LatentDraw>)> {
    if config.tau == 0 || config.n == 0 || config.groups.is_empty() {
        return Err(SurvError::InvalidDims(
            "synthetic cohort needs n >= 1, tau >= 1 and at least one group".into(),
        ));
    }
    for g in &config.groups {
        if !(g.hazard > 0.0 && g.hazard < 1.0) {
            return Err(SurvError::InvalidRate(format!(
                "hazard {} of group `{}` is outside (0, 1)",
                g.hazard, g.name
            )));
        }
        if !(g.weight > 0.0) {
            return Err(SurvError::InvalidRate(format!("weight of group `{}` must be positive", g.name)));
        }
    }
    if !(0.0..1.0).contains(&config.censoring_rate) {
        return Err(SurvError::InvalidRate(format!(
            "censoring rate {} is outside [0, 1)",
            config.censoring_rate
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = config.groups.iter().map(|g| g.weight).sum();
    let mut group_of = Vec::with_capacity(config.n);
    for (gi, g) in config.groups.iter().enumerate() {
        let count = if gi + 1 == config.groups.len() {
            config.n - group_of.len()
        } else {
            ((config.n as f64) * g.weight / total).round() as usize
        };
        group_of.extend(std::iter::repeat(gi).take(count.min(config.n - group_of.len())));
    }
    group_of.shuffle(&mut rng);

    let tau = config.tau;
    let mut records = Vec::with_capacity(config.n);
    let mut draws = Vec::with_capacity(config.n);
    for &group in &group_of {
        let hazard = config.groups[group].hazard;
        let u: f64 = 1.0 - rng.gen::<f64>();
        let geometric = (u.ln() / (1.0 - hazard).ln()).ceil().max(1.0);
        let event_time = (geometric <= tau as f64).then_some(geometric as usize);
        let censor_time = if rng.gen::<f64>() < config.censoring_rate {
            Some(rng.gen_range(1..=tau))
        } else {
            None
        };
        let mut features = Vec::with_capacity(1 + config.noise_features);
        features.push(group as f64);
        for _ in 0..config.noise_features {
            features.push(rng.gen_range(-1.0..1.0));
        }
        let (time, event) = match (event_time, censor_time) {
            (Some(e), Some(c)) if c < e => (c, false),
            (Some(e), _) => (e, true),
            (None, Some(c)) => (c, false),
            (None, None) => (tau, false),
        };
        records.push(SurvivalRecord {
            features,
            time,
            event,
        });
        draws.push(LatentDraw {
            group,
            event_time,
            censor_time,
        });
    }

    let mut feature_names = vec!["group".to_string()];
    feature_names.extend((1..=config.noise_features).map(|i| format!("x{i}")));
    let mut categorical_map = CategoricalMap::new();
    categorical_map.insert(
        "group".into(),
        config.groups.iter().map(|g| g.name.clone()).collect(),
    );
    Ok((
        DiscreteDataset {
            records,
            tau,
            feature_names,
            categorical_map,
        },
        draws,
    ))
}

/// Sidecar metadata written next to a canonical dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub tau: usize,
    pub strategy: Option<DiscretizeStrategy>,
    pub feature_names: Vec<String>,
    pub categorical_map: CategoricalMap,
    pub seed: Option<u64>,
}

/// Canonical form: `<features...>,time,event` with a header row. Values are
/// printed with full round-trip precision.
pub fn dataset_to_csv(dataset: &DiscreteDataset) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = dataset.feature_names.clone();
    header.push("time".into());
    header.push("event".into());
    writer.write_record(&header)?;
    for r in &dataset.records {
        let mut row: Vec<String> = r.features.iter().map(|v| format!("{v:?}")).collect();
        row.push(r.time.to_string());
        row.push(if r.event { "1" } else { "0" }.to_string());
        writer.write_record(&row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| SurvError::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_dataset(
    dataset: &DiscreteDataset,
    csv_path: &Path,
    strategy: Option<DiscretizeStrategy>,
    seed: Option<u64>,
) -> Result<()> {
    fs::write(csv_path, dataset_to_csv(dataset)?)?;
    let meta = DatasetMetadata {
        tau: dataset.tau,
        strategy,
        feature_names: dataset.feature_names.clone(),
        categorical_map: dataset.categorical_map.clone(),
        seed,
    };
    fs::write(metadata_path(csv_path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn metadata_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn read_dataset(csv_path: &Path) -> Result<DiscreteDataset> {
    let meta: DatasetMetadata = serde_json::from_str(&fs::read_to_string(metadata_path(csv_path))?)?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let d = meta.feature_names.len();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != d + 2 {
            return Err(SurvError::Parse(format!("row {} has {} columns, expected {}", i + 1, row.len(), d + 2)));
        }
        let parse = |j: usize| -> Result<f64> {
            row[j].parse::<f64>().map_err(|_| SurvError::NonNumericValue {
                row: i + 1,
                column: row[j].to_string(),
            })
        };
        let features = (0..d).map(parse).collect::<Result<Vec<_>>>()?;
        let time: usize = row[d]
            .parse()
            .map_err(|_| SurvError::NonNumericValue { row: i + 1, column: "time".into() })?;
        if time == 0 || time > meta.tau {
            return Err(SurvError::Parse(format!("row {}: time {time} outside 1..={}", i + 1, meta.tau)));
        }
        let event = match &row[d + 1] {
            "0" => false,
            "1" => true,
            _ => return Err(SurvError::InvalidEventFlag(i + 1)),
        };
        records.push(SurvivalRecord { features, time, event });
    }
    Ok(DiscreteDataset {
        records,
        tau: meta.tau,
        feature_names: meta.feature_names,
        categorical_map: meta.categorical_map,
    })
}

/// Turns raw covariates into model inputs: categorical codes are one-hot
/// expanded, numeric columns optionally standardized with statistics taken
/// from the dataset the encoder was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    columns: Vec<EncodedColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum EncodedColumn {
    Numeric { mean: f64, scale: f64 },
    OneHot { levels: usize },
}

impl FeatureEncoder {
    pub fn fit(dataset: &DiscreteDataset, standardize: bool) -> Self {
        let n = dataset.len().max(1) as f64;
        let columns = dataset
            .feature_names
            .iter()
            .enumerate()
            .map(|(j, name)| match dataset.categorical_map.get(name) {
                Some(levels) => EncodedColumn::OneHot { levels: levels.len() },
                None if standardize => {
                    let mean = dataset.records.iter().map(|r| r.features[j]).sum::<f64>() / n;
                    let var = dataset
                        .records
                        .iter()
                        .map(|r| (r.features[j] - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
                    EncodedColumn::Numeric { mean, scale }
                }
                None => EncodedColumn::Numeric { mean: 0.0, scale: 1.0 },
            })
            .collect();
        FeatureEncoder { columns }
    }

    pub fn dim(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                EncodedColumn::Numeric { .. } => 1,
                EncodedColumn::OneHot { levels } => *levels,
            })
            .sum()
    }

    pub fn encode_one(&self, features: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (c, &v) in self.columns.iter().zip(features) {
            match c {
                EncodedColumn::Numeric { mean, scale } => out.push((v - mean) / scale),
                EncodedColumn::OneHot { levels } => {
                    let code = v as usize;
                    out.extend((0..*levels).map(|l| if l == code { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    }

    pub fn encode(&self, dataset: &DiscreteDataset) -> Vec<Vec<f64>> {
        dataset.records.iter().map(|r| self.encode_one(&r.features)).collect()
    }
}
