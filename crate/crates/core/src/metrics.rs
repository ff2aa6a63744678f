//! Discrimination and composite evaluation: C-index, total score, the
//! per-subgroup report and paired comparison of repeated runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::calibration::{ece, l2_distance, variance_adjusted_distance, DEFAULT_ECE_BINS};
use crate::data::{DiscreteDataset, FeatureEncoder};
use crate::error::{Result, SurvError};
use crate::estimators::{km_curve, logrank_one_sample, SurvivalCurve, DEFAULT_SIGNIFICANCE};
use crate::model::{mean_curve, HazardModel};
use crate::subgroups::{member_indices, membership, SubgroupKind, SubgroupSpec};

/// Concordance over ordered pairs `(i, j)` with `delta_i = 1` and
/// `t_i < t_j`: the pair counts when `F(t_i | x_i) > F(t_i | x_j)`, with
/// `F = 1 - S`. Ties in `F` score 0, or 1/2 with `half_credit`.
pub fn c_index_from_curves(survival: &[Vec<f64>], outcomes: &[(usize, bool)], half_credit: bool) -> Result<f64> {
    if survival.len() != outcomes.len() {
        return Err(SurvError::LengthMismatch(survival.len(), outcomes.len()));
    }
    let (mut num, mut den) = (0.0, 0u64);
    for (i, &(ti, ei)) in outcomes.iter().enumerate() {
        if !ei {
            continue;
        }
        let fi = 1.0 - survival[i][ti];
        for (j, &(tj, _)) in outcomes.iter().enumerate() {
            if ti >= tj {
                continue;
            }
            den += 1;
            let fj = 1.0 - survival[j][ti];
            if fi > fj {
                num += 1.0;
            } else if half_credit && fi == fj {
                num += 0.5;
            }
        }
    }
    if den == 0 {
        return Err(SurvError::NoComparablePairs);
    }
    Ok(num / den as f64)
}

pub fn c_index(model: &HazardModel, xs: &[Vec<f64>], outcomes: &[(usize, bool)], half_credit: bool) -> Result<f64> {
    c_index_from_curves(&model.survival_matrix(xs)?, outcomes, half_credit)
}

/// Harmonic mean of `c_index` and `1 - ece`; 0 when both are 0.
pub fn total_score(c_index: f64, ece: f64) -> f64 {
    let a = 1.0 - ece;
    if c_index + a == 0.0 {
        0.0
    } else {
        2.0 * c_index * a / (c_index + a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bins: usize,
    pub significance: f64,
    pub half_credit: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bins: DEFAULT_ECE_BINS,
            significance: DEFAULT_SIGNIFICANCE,
            half_credit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub size: usize,
    pub population: bool,
    /// No test members; every metric below is absent.
    pub skipped: bool,
    pub logrank_passed: Option<bool>,
    pub logrank_statistic: Option<f64>,
    pub ece: Option<f64>,
    /// Absent when the subgroup has no comparable pair.
    pub c_index: Option<f64>,
    pub total_score: Option<f64>,
    pub l2_distance: Option<f64>,
    /// Absent when every timestep has zero or undefined variance.
    pub var_distance: Option<f64>,
    /// Diagnostic for rows whose statistics could not all be computed.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePair {
    pub name: String,
    pub km: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_id: String,
    pub model_id: String,
    pub bins: usize,
    pub significance: f64,
    pub rows: Vec<ReportRow>,
    pub curves: Vec<CurvePair>,
}

fn evaluate_members(
    name: &str,
    population: bool,
    survival: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    tau: usize,
    config: &EvalConfig,
) -> (ReportRow, Option<CurvePair>) {
    let mut row = ReportRow {
        name: name.to_string(),
        size: outcomes.len(),
        population,
        skipped: outcomes.is_empty(),
        logrank_passed: None,
        logrank_statistic: None,
        ece: None,
        c_index: None,
        total_score: None,
        l2_distance: None,
        var_distance: None,
        note: None,
    };
    if outcomes.is_empty() {
        row.note = Some("no test members".into());
        return (row, None);
    }
    let mut notes = Vec::new();
    let km = km_curve(outcomes, tau).expect("non-empty members with valid times");
    let predicted = SurvivalCurve::from_values(mean_curve(survival));
    match logrank_one_sample(outcomes, &predicted, tau, config.significance) {
        Ok(lr) => {
            row.logrank_passed = Some(lr.passed);
            row.logrank_statistic = Some(lr.statistic);
        }
        Err(e) => notes.push(format!("logrank: {e}")),
    }
    row.ece = ece(&predicted.values, &km.values, config.bins).ok();
    match c_index_from_curves(survival, outcomes, config.half_credit) {
        Ok(c) => row.c_index = Some(c),
        Err(e) => notes.push(format!("c-index: {e}")),
    }
    if let (Some(c), Some(e)) = (row.c_index, row.ece) {
        row.total_score = Some(total_score(c, e));
    }
    row.l2_distance = l2_distance(&predicted.values, &km.values).ok();
    match variance_adjusted_distance(&predicted.values, &km) {
        Ok((d, _)) => row.var_distance = Some(d),
        Err(e) => notes.push(format!("variance-adjusted distance: {e}")),
    }
    if !notes.is_empty() {
        row.note = Some(notes.join("; "));
    }
    let curves = CurvePair {
        name: name.to_string(),
        km: km.values,
        predicted: predicted.values,
    };
    (row, Some(curves))
}

/// Population row first, then one row per subgroup in the given order.
/// Subgroups without test members become skipped rows.
pub fn evaluate(
    model: &HazardModel,
    encoder: &FeatureEncoder,
    dataset: &DiscreteDataset,
    subgroups: &[SubgroupSpec],
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(SurvError::EmptyDataset);
    }
    let survival = model.survival_matrix(&encoder.encode(dataset))?;
    let outcomes = dataset.outcomes();
    let mut specs = vec![SubgroupSpec::full_population()];
    specs.extend(subgroups.iter().filter(|s| s.kind != SubgroupKind::FullPopulation).cloned());

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for spec in &specs {
        let members = member_indices(&membership(spec, dataset)?);
        let s: Vec<Vec<f64>> = members.iter().map(|&i| survival[i].clone()).collect();
        let o: Vec<(usize, bool)> = members.iter().map(|&i| outcomes[i]).collect();
        let population = spec.kind == SubgroupKind::FullPopulation;
        let (row, pair) = evaluate_members(&spec.name, population, &s, &o, dataset.tau, config);
        rows.push(row);
        curves.extend(pair);
    }
    Ok(EvaluationReport {
        dataset_id: String::new(),
        model_id: String::new(),
        bins: config.bins,
        significance: config.significance,
        rows,
        curves,
    })
}

fn opt<T: std::fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map(|x| format!("{x:?}")).unwrap_or_default()
}

impl EvaluationReport {
    pub const COLUMNS: [&'static str; 11] = [
        "name",
        "size",
        "population",
        "skipped",
        "logrank_passed",
        "logrank_statistic",
        "ece",
        "c_index",
        "total_score",
        "l2_distance",
        "var_distance",
    ];

    pub fn population(&self) -> &ReportRow {
        self.rows.iter().find(|r| r.population).expect("population row")
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    fn cells(row: &ReportRow) -> Vec<String> {
        vec![
            row.name.clone(),
            row.size.to_string(),
            row.population.to_string(),
            row.skipped.to_string(),
            opt(&row.logrank_passed),
            opt(&row.logrank_statistic),
            opt(&row.ece),
            opt(&row.c_index),
            opt(&row.total_score),
            opt(&row.l2_distance),
            opt(&row.var_distance),
        ]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::COLUMNS)?;
        for row in &self.rows {
            w.write_record(Self::cells(row))?;
        }
        let bytes = w.into_inner().map_err(|e| SurvError::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SurvError::Parse(e.to_string()))
    }

    /// Human-readable table with 4-decimal numbers.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let header: Vec<String> = ["subgroup", "n", "logrank", "chi2", "ECE", "C-index", "total", "L2", "var-adj"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut lines = vec![header];
        for r in &self.rows {
            let name = if r.population { format!("{} *", r.name) } else { r.name.clone() };
            let logrank = match r.logrank_passed {
                _ if r.skipped => "skipped".to_string(),
                Some(true) => "pass".into(),
                Some(false) => "fail".into(),
                None => "-".into(),
            };
            lines.push(vec![
                name,
                r.size.to_string(),
                logrank,
                fmt(r.logrank_statistic),
                fmt(r.ece),
                fmt(r.c_index),
                fmt(r.total_score),
                fmt(r.l2_distance),
                fmt(r.var_distance),
            ]);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Long-format curve overlay data: `subgroup,t,km,predicted`.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("subgroup,t,km,predicted\n");
        for c in &self.curves {
            for (t, (k, p)) in c.km.iter().zip(&c.predicted).enumerate() {
                out.push_str(&format!("{},{t},{k:?},{p:?}\n", c.name));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Draw,
}

/// Paired two-sided t-test of `a` against `b`. A significant difference is a
/// win for `a` when it points in the preferred direction.
pub fn paired_t_test(a: &[f64], b: &[f64], significance: f64, higher_is_better: bool) -> Result<(f64, Outcome)> {
    if a.len() != b.len() {
        return Err(SurvError::MisalignedRuns(format!("{} vs {} paired values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(SurvError::MisalignedRuns("need at least two paired runs".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = if var > 0.0 {
        mean / (var / n).sqrt()
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| SurvError::InvalidConfig(e.to_string()))?;
    let p = if t.is_infinite() { 0.0 } else { 2.0 * (1.0 - dist.cdf(t.abs())) };
    let outcome = if p >= significance {
        Outcome::Draw
    } else if (mean > 0.0) == higher_is_better {
        Outcome::Win
    } else {
        Outcome::Loss
    };
    Ok((t, outcome))
}

/// Wins-losses-draws of each system against each other system, counted over
/// the keys both share (e.g. subgroup rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub systems: Vec<String>,
    /// `cells[a][b] = (wins, losses, draws)` of system `a` against `b`.
    pub cells: Vec<Vec<(usize, usize, usize)>>,
}

/// `runs[system][key]` holds one value per seed, in seed order.
pub fn compare(
    runs: &BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    significance: f64,
    higher_is_better: bool,
) -> Result<ComparisonTable> {
    if runs.len() < 2 {
        return Err(SurvError::MisalignedRuns("need at least two systems".into()));
    }
    let systems: Vec<String> = runs.keys().cloned().collect();
    let mut cells = vec![vec![(0, 0, 0); systems.len()]; systems.len()];
    for (i, a) in systems.iter().enumerate() {
        for (j, b) in systems.iter().enumerate() {
            if i == j {
                continue;
            }
            for (key, va) in &runs[a] {
                let Some(vb) = runs[b].get(key) else { continue };
                let (_, o) = paired_t_test(va, vb, significance, higher_is_better)?;
                let cell = &mut cells[i][j];
                match o {
                    Outcome::Win => cell.0 += 1,
                    Outcome::Loss => cell.1 += 1,
                    Outcome::Draw => cell.2 += 1,
                }
            }
        }
    }
    Ok(ComparisonTable { systems, cells })
}

impl ComparisonTable {
    pub fn to_table(&self) -> String {
        let w = self.systems.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut out = format!("{:<w$}", "");
        for s in &self.systems {
            out.push_str(&format!("  {s:>w$}"));
        }
        out.push('\n');
        for (i, s) in self.systems.iter().enumerate() {
            out.push_str(&format!("{s:<w$}"));
            for (j, &(wn, l, d)) in self.cells[i].iter().enumerate() {
                let cell = if i == j { "-".to_string() } else { format!("{wn}-{l}-{d}") };
                out.push_str(&format!("  {cell:>w$}"));
            }
            out.push('\n');
        }
        out
    }
}
