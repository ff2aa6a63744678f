//! Distances between a model's marginal survival curve and a KM reference,
//! the constraint penalties built on them, and ECE.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};
use crate::estimators::SurvivalCurve;
use crate::losses::probability_bin;
use crate::model::{hazard_cotangent_from_survival, mean_curve, survival_from_hazards, HazardModel};
use crate::subgroups::SubgroupSpec;

pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Mean squared gap over `t = 1..=tau`.
    L2,
    /// Largest gap in Greenwood standard deviations.
    VarianceAdjusted,
}

impl std::str::FromStr for DistanceKind {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(DistanceKind::L2),
            "var" | "variance_adjusted" => Ok(DistanceKind::VarianceAdjusted),
            other => Err(SurvError::Parse(format!("unknown distance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub subgroup: SubgroupSpec,
    pub c: f64,
    pub distance: DistanceKind,
}

impl ConstraintSpec {
    pub fn name(&self) -> &str {
        &self.subgroup.name
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(SurvError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// `(1/tau) * sum_{t=1}^{tau} (predicted(t) - reference(t))^2`.
pub fn l2_distance(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(predicted, reference)?;
    let tau = predicted.len() - 1;
    if tau == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (1..=tau).map(|t| (predicted[t] - reference[t]).powi(2)).sum();
    Ok(sum / tau as f64)
}

/// Timesteps that carry a usable Greenwood standard deviation.
fn valid_timesteps(reference: &SurvivalCurve) -> Result<Vec<(usize, f64)>> {
    let var = reference.variance.as_ref().ok_or(SurvError::MissingVariance)?;
    let flags = reference.variance_flag.as_ref();
    Ok((1..var.len())
        .filter(|&t| var[t] > 0.0 && !flags.is_some_and(|f| f[t]))
        .map(|t| (t, var[t].sqrt()))
        .collect())
}

/// Max over valid timesteps of `|predicted - reference| / sd`, with the
/// (smallest) maximizing timestep.
pub fn variance_adjusted_distance(predicted: &[f64], reference: &SurvivalCurve) -> Result<(f64, usize)> {
    same_len(predicted, &reference.values)?;
    let valid = valid_timesteps(reference)?;
    let mut best: Option<(f64, usize)> = None;
    for (t, sd) in valid {
        let z = (predicted[t] - reference.values[t]).abs() / sd;
        if best.is_none_or(|(b, _)| z > b) {
            best = Some((z, t));
        }
    }
    best.ok_or(SurvError::AllTimestepsSkipped)
}

/// One occupied ECE bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EceBin {
    /// 1-based bin index.
    pub bin: usize,
    pub count: usize,
    /// `count / (tau + 1)`.
    pub weight: f64,
    pub mean_predicted: f64,
    pub mean_reference: f64,
}

/// Occupied bins of the predicted values over `t = 0..=tau`; bin `m` covers
/// `((m-1)/M, m/M]` and 0 joins bin 1.
pub fn ece_bins(predicted: &[f64], reference: &[f64], bins: usize) -> Result<Vec<EceBin>> {
    same_len(predicted, reference)?;
    if bins == 0 {
        return Err(SurvError::InvalidDims("ECE needs at least one bin".into()));
    }
    let mut pred_sum = vec![0.0; bins];
    let mut ref_sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&p, &r) in predicted.iter().zip(reference) {
        let m = probability_bin(p, bins) - 1;
        pred_sum[m] += p;
        ref_sum[m] += r;
        count[m] += 1;
    }
    let total = predicted.len() as f64;
    Ok((0..bins)
        .filter(|&m| count[m] > 0)
        .map(|m| {
            let k = count[m] as f64;
            EceBin {
                bin: m + 1,
                count: count[m],
                weight: k / total,
                mean_predicted: pred_sum[m] / k,
                mean_reference: ref_sum[m] / k,
            }
        })
        .collect())
}

/// Binned gap between two curves over `t = 0..=tau`; bins follow the
/// predicted values.
pub fn ece(predicted: &[f64], reference: &[f64], bins: usize) -> Result<f64> {
    Ok(ece_bins(predicted, reference, bins)?
        .iter()
        .map(|b| b.weight * (b.mean_reference - b.mean_predicted).abs())
        .sum())
}

/// Constraint value `p = dist - c` together with the hazard cotangents of
/// `dist` for every member (same order as the input).
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub distance: f64,
    pub cotangents: Vec<Vec<f64>>,
}

/// Penalty from the members' hazards.
pub fn penalty_from_hazards(
    member_hazards: &[&[f64]],
    reference: &SurvivalCurve,
    distance: DistanceKind,
    c: f64,
) -> Result<Penalty> {
    if member_hazards.is_empty() {
        return Err(SurvError::EmptySubgroup("constraint".into()));
    }
    let survival: Vec<Vec<f64>> = member_hazards.iter().map(|h| survival_from_hazards(h)).collect();
    let marginal = mean_curve(&survival);
    let tau = marginal.len() - 1;
    let n = member_hazards.len() as f64;
    let mut ds = vec![0.0; tau + 1];
    let dist = match distance {
        DistanceKind::L2 => {
            let d = l2_distance(&marginal, &reference.values)?;
            for t in 1..=tau {
                ds[t] = 2.0 / (tau as f64 * n) * (marginal[t] - reference.values[t]);
            }
            d
        }
        DistanceKind::VarianceAdjusted => {
            let (d, t) = variance_adjusted_distance(&marginal, reference)?;
            let sd = reference.variance.as_ref().expect("checked above")[t].sqrt();
            let diff = marginal[t] - reference.values[t];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            ds[t] = sign / (sd * n);
            d
        }
    };
    let cotangents = member_hazards
        .iter()
        .zip(&survival)
        .map(|(h, s)| hazard_cotangent_from_survival(h, s, &ds))
        .collect();
    Ok(Penalty {
        value: dist - c,
        distance: dist,
        cotangents,
    })
}

/// `p_i(theta)` for one constraint; `members` index into `xs`.
pub fn constraint_penalty(
    model: &HazardModel,
    xs: &[Vec<f64>],
    members: &[usize],
    reference: &SurvivalCurve,
    spec: &ConstraintSpec,
) -> Result<Penalty> {
    if members.is_empty() {
        return Err(SurvError::EmptySubgroup(spec.subgroup.name.clone()));
    }
    let hazards = members
        .iter()
        .map(|&i| model.hazards(&xs[i]))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = hazards.iter().map(Vec::as_slice).collect();
    penalty_from_hazards(&refs, reference, spec.distance, spec.c)
}
