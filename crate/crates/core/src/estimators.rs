//! Kaplan–Meier curves with Greenwood variance, the censoring-distribution
//! curve, and logrank tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, SurvError};

/// Default significance of the logrank tests.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;

/// Risk set bookkeeping at one unique event time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCount {
    pub time: usize,
    pub at_risk: usize,
    pub events: usize,
}

/// Survival probabilities on `t = 0..=tau`, with `values[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub values: Vec<f64>,
    /// Greenwood variance per timestep.
    pub variance: Option<Vec<f64>>,
    /// `true` where the Greenwood sum is undefined because everyone at risk
    /// had the event (the curve is 0 from there on).
    pub variance_flag: Option<Vec<bool>>,
    pub event_table: Option<Vec<EventCount>>,
}

impl SurvivalCurve {
    pub fn from_values(values: Vec<f64>) -> Self {
        SurvivalCurve {
            values,
            variance: None,
            variance_flag: None,
            event_table: None,
        }
    }

    pub fn tau(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn at(&self, t: usize) -> f64 {
        self.values[t]
    }

    /// Delimited export with columns `t,S,variance,flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,S,variance,flag\n");
        for (t, s) in self.values.iter().enumerate() {
            let var = self.variance.as_ref().map(|v| v[t]);
            let flag = self.variance_flag.as_ref().map(|f| f[t]).unwrap_or(false);
            let var = var.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(out, "{t},{s:?},{var},{}", u8::from(flag));
        }
        out
    }
}

/// Kaplan–Meier estimate over `(time, event)` pairs with times in `1..=tau`.
pub fn km_curve(records: &[(usize, bool)], tau: usize) -> Result<SurvivalCurve> {
    if records.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    if let Some(&(t, _)) = records.iter().find(|(t, _)| *t == 0 || *t > tau) {
        return Err(SurvError::Parse(format!("time {t} outside 1..={tau}")));
    }

    // events and exits per timestep
    let mut events = vec![0usize; tau + 1];
    let mut exits = vec![0usize; tau + 1];
    for &(t, e) in records {
        exits[t] += 1;
        if e {
            events[t] += 1;
        }
    }

    let mut values = vec![1.0; tau + 1];
    let mut variance = vec![0.0; tau + 1];
    let mut flag = vec![false; tau + 1];
    let mut table = Vec::new();
    let mut at_risk = records.len();
    let mut surv = 1.0;
    let mut greenwood = 0.0;
    let mut undefined = false;
    // Between censoring exits the product of (n - d) / n telescopes to a
    // single ratio of at-risk counts; evaluating it that way keeps the
    // uncensored case exactly equal to the empirical survivor fraction.
    let (mut base, mut base_n) = (1.0, at_risk);
    for t in 1..=tau {
        let e = events[t];
        if e > 0 {
            table.push(EventCount {
                time: t,
                at_risk,
                events: e,
            });
            surv = base * ((at_risk - e) as f64 / base_n as f64);
            if e == at_risk {
                undefined = true;
            } else {
                greenwood += e as f64 / (at_risk as f64 * (at_risk - e) as f64);
            }
        }
        values[t] = surv;
        if undefined {
            flag[t] = true;
        } else {
            variance[t] = surv * surv * greenwood;
        }
        at_risk -= exits[t];
        if exits[t] > e {
            base = surv;
            base_n = at_risk;
        }
    }
    Ok(SurvivalCurve {
        values,
        variance: Some(variance),
        variance_flag: Some(flag),
        event_table: Some(table),
    })
}

/// KM curve of the censoring times, `G(t)`: the event indicator is flipped.
pub fn censoring_km(records: &[(usize, bool)], tau: usize) -> Result<SurvivalCurve> {
    let flipped: Vec<(usize, bool)> = records.iter().map(|&(t, e)| (t, !e)).collect();
    km_curve(&flipped, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogrankResult {
    pub statistic: f64,
    /// The null hypothesis of identical curves was not rejected.
    pub passed: bool,
    pub significance: f64,
}

/// Upper `significance` quantile of the chi-square distribution with one degree of freedom.
pub fn chi2_critical(significance: f64) -> f64 {
    ChiSquared::new(1.0)
        .expect("one degree of freedom")
        .inverse_cdf(1.0 - significance)
}

fn verdict(statistic: f64, significance: f64) -> LogrankResult {
    LogrankResult {
        statistic,
        passed: statistic <= chi2_critical(significance),
        significance,
    }
}

fn check_significance(significance: f64) -> Result<()> {
    if significance > 0.0 && significance < 1.0 {
        Ok(())
    } else {
        Err(SurvError::Parse(format!("significance {significance} outside (0, 1)")))
    }
}

/// Two-group logrank test (observed minus expected events of group `a`,
/// hypergeometric variance).
pub fn logrank_two_sample(
    a: &[(usize, bool)],
    b: &[(usize, bool)],
    tau: usize,
    significance: f64,
) -> Result<LogrankResult> {
    if a.is_empty() || b.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    check_significance(significance)?;
    if !a.iter().chain(b).any(|&(_, e)| e) {
        return Err(SurvError::NoEvents);
    }
    let tally = |group: &[(usize, bool)]| {
        let mut deaths: BTreeMap<usize, usize> = BTreeMap::new();
        let mut exits = vec![0usize; tau + 2];
        for &(t, e) in group {
            exits[t.min(tau + 1)] += 1;
            if e {
                *deaths.entry(t).or_default() += 1;
            }
        }
        (deaths, exits)
    };
    let (deaths_a, exits_a) = tally(a);
    let (deaths_b, exits_b) = tally(b);

    let (mut risk_a, mut risk_b) = (a.len() as f64, b.len() as f64);
    let (mut observed, mut expected, mut var) = (0.0, 0.0, 0.0);
    for t in 1..=tau {
        let da = *deaths_a.get(&t).unwrap_or(&0) as f64;
        let db = *deaths_b.get(&t).unwrap_or(&0) as f64;
        let d = da + db;
        let n = risk_a + risk_b;
        if d > 0.0 && n > 0.0 {
            observed += da;
            expected += d * risk_a / n;
            if n > 1.0 {
                var += d * (risk_a / n) * (1.0 - risk_a / n) * (n - d) / (n - 1.0);
            }
        }
        risk_a -= exits_a[t] as f64;
        risk_b -= exits_b[t] as f64;
    }
    let diff = observed - expected;
    let statistic = if var > 0.0 {
        diff * diff / var
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(verdict(statistic, significance))
}

/// One-sample logrank test of `records` against a fixed reference curve:
/// expected events at `t` are the at-risk count times the reference hazard
/// `1 - S(t) / S(t-1)`, statistic `(O - E)^2 / E`.
pub fn logrank_one_sample(
    records: &[(usize, bool)],
    reference: &SurvivalCurve,
    tau: usize,
    significance: f64,
) -> Result<LogrankResult> {
    if records.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    check_significance(significance)?;
    if reference.values.len() != tau + 1 {
        return Err(SurvError::LengthMismatch(reference.values.len(), tau + 1));
    }
    let mut deaths = vec![0usize; tau + 1];
    let mut exits = vec![0usize; tau + 1];
    for &(t, e) in records {
        if t == 0 || t > tau {
            return Err(SurvError::Parse(format!("time {t} outside 1..={tau}")));
        }
        exits[t] += 1;
        if e {
            deaths[t] += 1;
        }
    }
    let mut at_risk = records.len();
    let (mut observed, mut expected) = (0.0, 0.0);
    for t in 1..=tau {
        if at_risk == 0 {
            break;
        }
        let prev = reference.values[t - 1];
        if prev <= 0.0 {
            return Err(SurvError::ZeroReferenceSurvival(t));
        }
        let hazard = (1.0 - reference.values[t] / prev).clamp(0.0, 1.0);
        observed += deaths[t] as f64;
        expected += at_risk as f64 * hazard;
        at_risk -= exits[t];
    }
    let diff = observed - expected;
    let statistic = if expected > 0.0 {
        diff * diff / expected
    } else if observed == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(verdict(statistic, significance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uncensored(times: &[usize]) -> Vec<(usize, bool)> {
        times.iter().map(|&t| (t, true)).collect()
    }

    fn table6() -> Vec<(usize, bool)> {
        let mut r = uncensored(&[1, 2, 3, 4, 5]);
        for _ in 0..2 {
            r.extend((1..=5).map(|t| (t, false)));
        }
        r
    }

    #[test]
    fn km_on_five_uncensored() {
        let c = km_curve(&uncensored(&[1, 2, 3, 4, 5]), 5).unwrap();
        let expect = [1.0, 0.8, 0.6, 0.4, 0.2, 0.0];
        for (a, b) in c.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(c.values[5], 0.0);
    }

    #[test]
    fn km_on_mixed_censoring() {
        let c = km_curve(&table6(), 5).unwrap();
        let exact = 14.0 / 15.0 * 11.0 / 12.0 * 8.0 / 9.0 * 5.0 / 6.0 * 2.0 / 3.0;
        assert!((c.values[5] - exact).abs() < 1e-12);
        assert!((c.values[5] - 0.4225).abs() < 5e-4);
        let table = c.event_table.unwrap();
        assert_eq!(table[1], EventCount { time: 2, at_risk: 12, events: 1 });
    }

    #[test]
    fn km_all_censored_is_flat() {
        let c = km_curve(&[(2, false), (3, false)], 4).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn km_rejects_empty() {
        assert!(matches!(km_curve(&[], 3), Err(SurvError::EmptyInput)));
    }

    #[test]
    fn greenwood_at_first_event() {
        let c = km_curve(&uncensored(&[1, 2, 3, 4, 5]), 5).unwrap();
        let var = c.variance.unwrap();
        assert!((var[1] - 0.032).abs() < 1e-12);
        // 0.6^2 * (1/20 + 1/12)
        assert!((var[2] - 0.36 * (1.0 / 20.0 + 1.0 / 12.0)).abs() < 1e-12);
        let flag = c.variance_flag.unwrap();
        assert!(flag[5] && !flag[4]);
        assert_eq!(var[5], 0.0);
    }

    #[test]
    fn greenwood_zero_before_first_event() {
        let c = km_curve(&[(3, true), (4, false), (5, true)], 5).unwrap();
        let var = c.variance.unwrap();
        assert_eq!(&var[..3], &[0.0, 0.0, 0.0]);
        assert!(var[3] > 0.0);
    }

    #[test]
    fn censoring_curve() {
        let g = censoring_km(&uncensored(&[1, 2, 3]), 3).unwrap();
        assert!(g.values.iter().all(|&v| v == 1.0));

        let g = censoring_km(&[(3, false)], 4).unwrap();
        assert_eq!(g.values, vec![1.0, 1.0, 1.0, 0.0, 0.0]);

        // flip-indicator oracle against a direct product on the Brier counterexample cohort:
        // two censorings at each of t=1..5, risk sets 15, 12, 9, 6, 3
        let g = censoring_km(&table6(), 5).unwrap();
        let mut s = 1.0;
        for (t, k) in [(1, 15.0), (2, 12.0), (3, 9.0), (4, 6.0), (5, 3.0)] {
            s *= 1.0 - 2.0 / k;
            assert!((g.values[t] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn logrank_identical_groups() {
        let a = table6();
        let r = logrank_two_sample(&a, &a, 5, 0.05).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!(r.passed);
    }

    #[test]
    fn logrank_separated_groups() {
        let a = uncensored(&[1, 2, 3]);
        let b = uncensored(&[4, 5, 6]);
        let r = logrank_two_sample(&a, &b, 6, 0.05).unwrap();
        // hand O/E/V table: at t=1,2,3 the risk sets are (3,3), (2,3), (1,3)
        let rows: [(f64, f64); 3] = [(3.0, 3.0), (2.0, 3.0), (1.0, 3.0)];
        let mut e = 0.0;
        let mut v = 0.0;
        for (na, nb) in rows {
            let n = na + nb;
            e += na / n;
            v += (na / n) * (nb / n) * (n - 1.0) / (n - 1.0);
        }
        let expected = (3.0 - e) * (3.0 - e) / v;
        assert!((r.statistic - expected).abs() < 1e-12, "{} vs {expected}", r.statistic);
        assert!(!r.passed);
        let swapped = logrank_two_sample(&b, &a, 6, 0.05).unwrap();
        assert!((swapped.statistic - r.statistic).abs() < 1e-9);
    }

    #[test]
    fn logrank_needs_events() {
        let a = [(1, false), (2, false)];
        assert!(matches!(
            logrank_two_sample(&a, &a, 2, 0.05),
            Err(SurvError::NoEvents)
        ));
    }

    #[test]
    fn critical_value_default() {
        assert!((chi2_critical(0.05) - 3.841458820694124).abs() < 1e-9);
    }

    #[test]
    fn one_sample_against_own_km() {
        let records = uncensored(&[1, 2, 2, 3, 5, 5, 5]);
        let km = km_curve(&records, 5).unwrap();
        let r = logrank_one_sample(&records, &km, 5, 0.05).unwrap();
        assert!(r.statistic < 1e-20);
        assert!(r.passed);
    }

    #[test]
    fn one_sample_flat_reference() {
        let flat = SurvivalCurve::from_values(vec![1.0; 4]);
        let r = logrank_one_sample(&[(2, true)], &flat, 3, 0.05).unwrap();
        assert!(r.statistic.is_infinite());
        assert!(!r.passed);
    }

    #[test]
    fn one_sample_zero_reference() {
        let dead = SurvivalCurve::from_values(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            logrank_one_sample(&[(3, true)], &dead, 3, 0.05),
            Err(SurvError::ZeroReferenceSurvival(2))
        ));
    }

    #[test]
    fn curve_csv_export() {
        let c = km_curve(&uncensored(&[1, 2]), 2).unwrap();
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,S,variance,flag");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",1"));
    }
}
