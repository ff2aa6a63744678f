//! Training objectives (DRSA likelihood, RPS) and the calibration scores
//! they are compared against (D-Calibration, Brier / integrated Brier).
//!
//! Per-example survival inputs are `S(0..=tau)` vectors; hazards are
//! `h_1..h_tau` vectors. Outcomes are `(time, event)` pairs.

use crate::error::{Result, SurvError};
use crate::estimators::SurvivalCurve;
use crate::model::{hazard_cotangent_from_survival, survival_from_hazards, HazardModel};

pub const DEFAULT_DCAL_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// `dL/dh_t` per example and timestep (index `t - 1`).
    pub cotangents: Option<Vec<Vec<f64>>>,
}

fn check_batch(xs_len: usize, outcomes: &[(usize, bool)], tau: usize) -> Result<()> {
    if outcomes.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    if xs_len != outcomes.len() {
        return Err(SurvError::DimensionMismatch {
            expected: outcomes.len(),
            got: xs_len,
        });
    }
    if let Some(&(t, _)) = outcomes.iter().find(|(t, _)| *t == 0 || *t > tau) {
        return Err(SurvError::Parse(format!("time {t} outside 1..={tau}")));
    }
    Ok(())
}

/// One example's DRSA negative log-likelihood and its hazard cotangent.
///
/// Uncensored: `-log h_t - sum_{t'<t} log(1 - h_t') - log(1 - prod_{t'<tau} (1 - h_t'))`.
/// Censored: `-sum_{t'<t} log(1 - h_t')`. With `tau = 1` the product is empty
/// and the middle term is dropped.
pub fn drsa_example(hazards: &[f64], time: usize, event: bool) -> (f64, Vec<f64>) {
    let tau = hazards.len();
    let mut grad = vec![0.0; tau];
    let mut loss = 0.0;
    for tp in 1..time {
        let h = hazards[tp - 1];
        loss -= (-h).ln_1p();
        grad[tp - 1] += 1.0 / (1.0 - h);
    }
    if event {
        let h = hazards[time - 1];
        loss -= h.ln();
        grad[time - 1] -= 1.0 / h;
        if tau > 1 {
            let log_prod: f64 = hazards[..tau - 1].iter().map(|&h| (-h).ln_1p()).sum();
            let one_minus = -log_prod.exp_m1();
            loss -= one_minus.ln();
            let ratio = log_prod.exp() / one_minus;
            for tp in 1..tau {
                grad[tp - 1] -= ratio / (1.0 - hazards[tp - 1]);
            }
        }
    }
    (loss, grad)
}

/// Mean DRSA loss over precomputed hazards.
pub fn drsa_from_hazards(hazards: &[Vec<f64>], outcomes: &[(usize, bool)]) -> LossValue {
    let n = outcomes.len() as f64;
    let mut value = 0.0;
    let mut cot = Vec::with_capacity(outcomes.len());
    for (h, &(t, e)) in hazards.iter().zip(outcomes) {
        let (l, mut g) = drsa_example(h, t, e);
        value += l;
        g.iter_mut().for_each(|v| *v /= n);
        cot.push(g);
    }
    LossValue {
        value: value / n,
        cotangents: Some(cot),
    }
}

pub fn drsa_loss(model: &HazardModel, xs: &[Vec<f64>], outcomes: &[(usize, bool)]) -> Result<LossValue> {
    check_batch(xs.len(), outcomes, model.tau())?;
    let hazards = xs.iter().map(|x| model.hazards(x)).collect::<Result<Vec<_>>>()?;
    Ok(drsa_from_hazards(&hazards, outcomes))
}

/// One example's RPS term and `dL/dS(t)` for `t = 0..=tau` (index 0 is zero).
pub fn rps_example_survival(survival: &[f64], time: usize, event: bool) -> (f64, Vec<f64>) {
    let tau = survival.len() - 1;
    let mut ds = vec![0.0; tau + 1];
    let mut loss = 0.0;
    let last = if event { tau } else { time };
    for t in 0..=last {
        let target = if !event || t < time { 1.0 } else { 0.0 };
        let diff = survival[t] - target;
        loss += diff * diff;
        if t > 0 {
            ds[t] = 2.0 * diff;
        }
    }
    (loss, ds)
}

pub fn rps_from_hazards(hazards: &[Vec<f64>], outcomes: &[(usize, bool)]) -> LossValue {
    let mut value = 0.0;
    let mut cot = Vec::with_capacity(outcomes.len());
    for (h, &(t, e)) in hazards.iter().zip(outcomes) {
        let s = survival_from_hazards(h);
        let (l, ds) = rps_example_survival(&s, t, e);
        value += l;
        cot.push(hazard_cotangent_from_survival(h, &s, &ds));
    }
    LossValue {
        value,
        cotangents: Some(cot),
    }
}

/// RPS summed over the batch.
pub fn rps_loss(model: &HazardModel, xs: &[Vec<f64>], outcomes: &[(usize, bool)]) -> Result<LossValue> {
    check_batch(xs.len(), outcomes, model.tau())?;
    let hazards = xs.iter().map(|x| model.hazards(x)).collect::<Result<Vec<_>>>()?;
    Ok(rps_from_hazards(&hazards, outcomes))
}

/// RPS on explicit survival curves (no gradient).
pub fn rps_on_curves(survival: &[Vec<f64>], outcomes: &[(usize, bool)]) -> f64 {
    survival
        .iter()
        .zip(outcomes)
        .map(|(s, &(t, e))| rps_example_survival(s, t, e).0)
        .sum()
}

/// 1-based index of the interval `((m-1)/M, m/M]` holding `p`; `p <= 0` goes to 1.
pub fn probability_bin(p: f64, bins: usize) -> usize {
    ((p * bins as f64).ceil() as usize).clamp(1, bins)
}

/// D-Calibration of the values `F(t_i | x_i) = 1 - S(t_i | x_i)`.
///
/// Censored individuals contribute `(b - F) / (1 - F)` to the interval
/// containing `F` and `(b - a) / F` to every interval whose lower edge lies
/// above `F`. `denominator_floor` clamps both denominators from below; with
/// `None` a non-positive denominator is an error.
pub fn dcal_from_curves(
    survival: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    bins: usize,
    denominator_floor: Option<f64>,
) -> Result<f64> {
    if bins == 0 {
        return Err(SurvError::InvalidDims("D-Calibration needs at least one interval".into()));
    }
    if outcomes.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    let denom = |v: f64| -> Result<f64> {
        match denominator_floor {
            Some(floor) => Ok(v.max(floor)),
            None if v > 0.0 => Ok(v),
            None => Err(SurvError::DegenerateDenominator),
        }
    };
    let width = 1.0 / bins as f64;
    let mut mass = vec![0.0; bins];
    for (s, &(t, event)) in survival.iter().zip(outcomes) {
        let f = 1.0 - s[t];
        let home = probability_bin(f, bins);
        if event {
            mass[home - 1] += 1.0;
            continue;
        }
        for m in 1..=bins {
            let a = (m - 1) as f64 * width;
            let b = m as f64 * width;
            if m == home {
                mass[m - 1] += (b - f) / denom(1.0 - f)?;
            }
            if f < a {
                mass[m - 1] += (b - a) / denom(f)?;
            }
        }
    }
    let n = outcomes.len() as f64;
    Ok(mass.iter().map(|m| (m / n - width).powi(2)).sum())
}

pub fn dcal_metric(
    model: &HazardModel,
    xs: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    bins: usize,
) -> Result<f64> {
    check_batch(xs.len(), outcomes, model.tau())?;
    let survival = model.survival_matrix(xs)?;
    dcal_from_curves(&survival, outcomes, bins, Some(model.clamp_epsilon()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrierValue {
    pub value: f64,
    /// Some censoring-survival denominator fell below the floor and was clamped.
    pub clamped: bool,
}

/// IPCW Brier score at `t` over explicit survival curves.
pub fn brier_from_curves(
    survival: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    t: usize,
    g_hat: &SurvivalCurve,
    floor: f64,
) -> Result<BrierValue> {
    if outcomes.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    let mut clamped = false;
    let mut g = |time: usize| {
        let v = g_hat.values[time];
        if v < floor {
            clamped = true;
            floor
        } else {
            v
        }
    };
    let mut total = 0.0;
    for (s, &(ti, event)) in survival.iter().zip(outcomes) {
        let st = s[t];
        if ti <= t && event {
            total += st * st / g(ti);
        } else if ti > t {
            total += (1.0 - st) * (1.0 - st) / g(t);
        }
    }
    Ok(BrierValue {
        value: total / outcomes.len() as f64,
        clamped,
    })
}

/// Mean of the Brier score over `t = 1..=tau`.
pub fn integrated_brier_from_curves(
    survival: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    g_hat: &SurvivalCurve,
    floor: f64,
) -> Result<BrierValue> {
    let tau = g_hat.tau();
    let mut sum = 0.0;
    let mut clamped = false;
    for t in 1..=tau {
        let b = brier_from_curves(survival, outcomes, t, g_hat, floor)?;
        sum += b.value;
        clamped |= b.clamped;
    }
    Ok(BrierValue {
        value: sum / tau as f64,
        clamped,
    })
}

pub fn brier_score(
    model: &HazardModel,
    xs: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    t: usize,
    g_hat: &SurvivalCurve,
) -> Result<BrierValue> {
    check_batch(xs.len(), outcomes, model.tau())?;
    let survival = model.survival_matrix(xs)?;
    brier_from_curves(&survival, outcomes, t, g_hat, model.clamp_epsilon())
}

pub fn integrated_brier(
    model: &HazardModel,
    xs: &[Vec<f64>],
    outcomes: &[(usize, bool)],
    g_hat: &SurvivalCurve,
) -> Result<BrierValue> {
    check_batch(xs.len(), outcomes, model.tau())?;
    let survival = model.survival_matrix(xs)?;
    integrated_brier_from_curves(&survival, outcomes, g_hat, model.clamp_epsilon())
}
