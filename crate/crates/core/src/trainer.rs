//! Training loops: the primal-dual constrained trainer and the two
//! unconstrained baselines (DRSA, DRSA plus weighted RPS).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{penalty_from_hazards, ConstraintSpec, DistanceKind};
use crate::calibration::{l2_distance, variance_adjusted_distance};
use crate::data::{DiscreteDataset, FeatureEncoder};
use crate::error::{Result, SurvError};
use crate::estimators::{km_curve, SurvivalCurve};
use crate::losses::{drsa_from_hazards, rps_from_hazards};
use crate::metrics::c_index_from_curves;
use crate::model::{mean_curve, HazardModel};
use crate::subgroups::{member_indices, membership};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuInit {
    /// Each multiplier drawn from U[0, 1].
    Uniform,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub eta: f64,
    pub outer_iters: usize,
    pub patience: usize,
    /// SGD steps per outer iteration; `None` means one pass over train.
    pub inner_steps: Option<usize>,
    pub inner_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: Option<f64>,
    pub mu_init: MuInit,
    /// Keep the parameters after every outer iteration.
    pub keep_snapshots: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            eta: 0.01,
            outer_iters: 3000,
            patience: 500,
            inner_steps: None,
            inner_lr: 0.01,
            batch_size: 32,
            seed: 0,
            momentum: None,
            mu_init: MuInit::Uniform,
            keep_snapshots: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SurvError::InvalidConfig(m.to_string()));
        if !(self.eta > 0.0) {
            return bad("eta must be > 0");
        }
        if self.outer_iters == 0 || self.patience == 0 {
            return bad("outer_iters and patience must be >= 1");
        }
        if self.inner_steps == Some(0) || self.batch_size == 0 {
            return bad("inner_steps and batch_size must be >= 1");
        }
        if !(self.inner_lr > 0.0) {
            return bad("inner_lr must be > 0");
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must be in [0, 1)");
            }
        }
        if let MuInit::Constant(v) = self.mu_init {
            if !(v >= 0.0) {
                return bad("initial multiplier must be >= 0");
            }
        }
        Ok(())
    }
}

/// Encoded inputs and outcomes for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub xs: Vec<Vec<f64>>,
    pub outcomes: Vec<(usize, bool)>,
}

impl Cohort {
    pub fn encode(dataset: &DiscreteDataset, encoder: &FeatureEncoder) -> Self {
        Cohort {
            xs: encoder.encode(dataset),
            outcomes: dataset.outcomes(),
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// A constraint with its member lists and KM references on train and
/// validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedConstraint {
    pub spec: ConstraintSpec,
    pub train_members: Vec<usize>,
    pub train_reference: SurvivalCurve,
    pub val_members: Vec<usize>,
    pub val_reference: Option<SurvivalCurve>,
}

fn subgroup_km(dataset: &DiscreteDataset, members: &[usize]) -> Result<SurvivalCurve> {
    let outcomes: Vec<(usize, bool)> = members
        .iter()
        .map(|&i| (dataset.records[i].time, dataset.records[i].event))
        .collect();
    km_curve(&outcomes, dataset.tau)
}

pub fn prepare_constraints(
    constraints: &[ConstraintSpec],
    train: &DiscreteDataset,
    validation: &DiscreteDataset,
) -> Result<Vec<PreparedConstraint>> {
    constraints
        .iter()
        .map(|spec| {
            let train_members = member_indices(&membership(&spec.subgroup, train)?);
            if train_members.is_empty() {
                return Err(SurvError::EmptySubgroupOnTrain(spec.name().to_string()));
            }
            let train_reference = subgroup_km(train, &train_members)?;
            let val_members = member_indices(&membership(&spec.subgroup, validation)?);
            let val_reference = if val_members.is_empty() {
                None
            } else {
                Some(subgroup_km(validation, &val_members)?)
            };
            Ok(PreparedConstraint {
                spec: spec.clone(),
                train_members,
                train_reference,
                val_members,
                val_reference,
            })
        })
        .collect()
}

/// Plain or momentum SGD over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: Option<f64>, num_params: usize) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: vec![0.0; if momentum.is_some() { num_params } else { 0 }],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.momentum {
            None => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Some(m) => {
                for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
                    *v = m * *v + g;
                    *p -= self.lr * *v;
                }
            }
        }
    }
}

/// Full-train penalties `p_i = dist_i - c_i` for every constraint, plus the
/// per-example hazard cotangents of `sum_i weights[i] * dist_i` when
/// `weights` is given.
fn train_penalties(
    hazards: &[Vec<f64>],
    constraints: &[PreparedConstraint],
    weights: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>)> {
    let tau = hazards.first().map_or(0, Vec::len);
    let mut acc = weights.map(|_| vec![vec![0.0; tau]; hazards.len()]);
    let mut values = Vec::with_capacity(constraints.len());
    for (k, con) in constraints.iter().enumerate() {
        let member_h: Vec<&[f64]> = con.train_members.iter().map(|&i| hazards[i].as_slice()).collect();
        let pen = penalty_from_hazards(&member_h, &con.train_reference, con.spec.distance, con.spec.c)?;
        values.push(pen.value);
        if let (Some(acc), Some(w)) = (acc.as_mut(), weights) {
            if w[k] != 0.0 {
                for (&i, cot) in con.train_members.iter().zip(&pen.cotangents) {
                    for (a, c) in acc[i].iter_mut().zip(cot) {
                        *a += w[k] * c;
                    }
                }
            }
        }
    }
    Ok((values, acc))
}

/// Objective for one inner step.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub constraints: &'a [PreparedConstraint],
    pub mu: &'a [f64],
    /// Weight on the RPS term (summed over the batch, divided by batch size).
    pub rps_weight: f64,
}

impl Objective<'_> {
    pub fn drsa() -> Objective<'static> {
        Objective {
            constraints: &[],
            mu: &[],
            rps_weight: 0.0,
        }
    }
}

/// Value and parameter gradient of
/// `mean DRSA(batch) + rps_weight * RPS(batch) / |batch| + sum_i mu_i p_i(train)`.
/// Constraint terms with `mu_i = 0` are skipped entirely, so a zero
/// multiplier vector yields exactly the unconstrained gradient.
pub fn objective_gradient(
    model: &HazardModel,
    batch: &[usize],
    train: &Cohort,
    objective: &Objective<'_>,
) -> Result<(f64, Vec<f64>)> {
    let xs: Vec<Vec<f64>> = batch.iter().map(|&i| train.xs[i].clone()).collect();
    let outcomes: Vec<(usize, bool)> = batch.iter().map(|&i| train.outcomes[i]).collect();
    let tapes = model.forward_batch(&xs)?;
    let hazards: Vec<Vec<f64>> = tapes.iter().map(|t| t.hazards.clone()).collect();
    let drsa = drsa_from_hazards(&hazards, &outcomes);
    let mut value = drsa.value;
    let mut cot = drsa.cotangents.expect("drsa cotangents");
    if objective.rps_weight != 0.0 {
        let rps = rps_from_hazards(&hazards, &outcomes);
        let scale = objective.rps_weight / batch.len() as f64;
        value += scale * rps.value;
        for (c, r) in cot.iter_mut().zip(rps.cotangents.expect("rps cotangents")) {
            for (a, b) in c.iter_mut().zip(r) {
                *a += scale * b;
            }
        }
    }
    let mut grad = vec![0.0; model.num_params()];
    for ((x, tape), dh) in xs.iter().zip(&tapes).zip(&cot) {
        model.backward(x, tape, dh, &mut grad);
    }

    if objective.mu.iter().any(|&m| m != 0.0) {
        let tapes = model.forward_batch(&train.xs)?;
        let hazards: Vec<Vec<f64>> = tapes.iter().map(|t| t.hazards.clone()).collect();
        let (p, acc) = train_penalties(&hazards, objective.constraints, Some(objective.mu))?;
        value += objective.mu.iter().zip(&p).map(|(m, p)| m * p).sum::<f64>();
        let acc = acc.expect("weights given");
        for ((x, tape), dh) in train.xs.iter().zip(&tapes).zip(&acc) {
            if dh.iter().any(|&v| v != 0.0) {
                model.backward(x, tape, dh, &mut grad);
            }
        }
    }
    Ok((value, grad))
}

fn batch_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// The SGD steps of outer iteration `iteration` (1-based). The batch order
/// depends only on `(config.seed, iteration)`.
pub fn inner_loop(
    model: &mut HazardModel,
    opt: &mut Sgd,
    train: &Cohort,
    objective: &Objective<'_>,
    config: &TrainerConfig,
    iteration: usize,
) -> Result<()> {
    let n = train.len();
    let bs = config.batch_size.min(n);
    let steps = config.inner_steps.unwrap_or(n.div_ceil(bs));
    let mut rng = batch_rng(config.seed, iteration);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    for step in 0..steps {
        if pos >= n {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + bs).min(n);
        let (value, grad) = objective_gradient(model, &order[pos..end], train, objective)?;
        pos = end;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SurvError::NonFiniteLoss {
                iteration,
                detail: format!("inner step {step}: objective {value}"),
            });
        }
        opt.step(&mut model.params, &grad);
    }
    Ok(())
}

/// One record per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub val_satisfied: usize,
    pub val_c_index: f64,
    pub train_satisfied: usize,
    pub train_loss: f64,
    pub penalties: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the selected iteration.
    pub model: HazardModel,
    pub final_model: HazardModel,
    pub selected_iteration: usize,
    pub history: Vec<HistoryRow>,
    pub constraint_names: Vec<String>,
    pub initial_mu: Vec<f64>,
    pub stopped_early: bool,
    /// Parameters after each outer iteration, when requested.
    pub snapshots: Option<Vec<Vec<f64>>>,
}

impl TrainOutcome {
    pub fn selected_row(&self) -> &HistoryRow {
        &self.history[self.selected_iteration - 1]
    }
}

/// Iteration maximizing (validation constraints satisfied, validation
/// C-index), earliest first on ties.
pub fn select_model(history: &[HistoryRow]) -> Option<usize> {
    let mut best: Option<&HistoryRow> = None;
    for row in history {
        let better = match best {
            None => true,
            Some(b) => is_better(row, b),
        };
        if better {
            best = Some(row);
        }
    }
    best.map(|r| r.iteration)
}

fn is_better(row: &HistoryRow, best: &HistoryRow) -> bool {
    row.val_satisfied > best.val_satisfied
        || (row.val_satisfied == best.val_satisfied && row.val_c_index > best.val_c_index)
}

/// Projected dual ascent step.
pub fn dual_update(mu: &mut [f64], penalties: &[f64], eta: f64) {
    for (m, p) in mu.iter_mut().zip(penalties) {
        *m = (*m + eta * p).max(0.0);
    }
}

/// Dual step with the parameters held fixed; returns the penalties used.
pub fn frozen_dual_step(
    model: &HazardModel,
    train: &Cohort,
    constraints: &[PreparedConstraint],
    mu: &mut [f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let hazards = train.xs.iter().map(|x| model.hazards(x)).collect::<Result<Vec<_>>>()?;
    let (p, _) = train_penalties(&hazards, constraints, None)?;
    dual_update(mu, &p, eta);
    Ok(p)
}

fn initial_mu(config: &TrainerConfig, m: usize) -> Vec<f64> {
    match config.mu_init {
        MuInit::Constant(v) => vec![v; m],
        MuInit::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(u64::MAX);
            (0..m).map(|_| rng.gen_range(0.0..=1.0)).collect()
        }
    }
}

/// Constraints whose validation marginal lies within `c` of the validation KM.
fn val_satisfied(constraints: &[PreparedConstraint], survival: &[Vec<f64>]) -> usize {
    constraints
        .iter()
        .filter(|con| {
            let Some(reference) = &con.val_reference else {
                return false;
            };
            let curves: Vec<Vec<f64>> = con.val_members.iter().map(|&i| survival[i].clone()).collect();
            let marginal = mean_curve(&curves);
            let dist = match con.spec.distance {
                DistanceKind::L2 => l2_distance(&marginal, &reference.values).ok(),
                DistanceKind::VarianceAdjusted => variance_adjusted_distance(&marginal, reference).ok().map(|d| d.0),
            };
            dist.is_some_and(|d| d <= con.spec.c)
        })
        .count()
}

enum Mode<'a> {
    Constrained(&'a [PreparedConstraint]),
    Baseline { rps_weight: f64 },
}

fn train_loop(init: HazardModel, train: &Cohort, validation: &Cohort, mode: Mode<'_>, config: &TrainerConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(SurvError::EmptyInput);
    }
    let (constraints, rps_weight) = match mode {
        Mode::Constrained(c) => (c, 0.0),
        Mode::Baseline { rps_weight } => (&[][..], rps_weight),
    };
    if let Some(c) = constraints.iter().find(|c| c.train_members.is_empty()) {
        return Err(SurvError::EmptySubgroupOnTrain(c.spec.name().to_string()));
    }
    let mut model = init;
    let mut opt = Sgd::new(config.inner_lr, config.momentum, model.num_params());
    let mut mu = initial_mu(config, constraints.len());
    let initial = mu.clone();
    let mut history: Vec<HistoryRow> = Vec::new();
    let mut snapshots = config.keep_snapshots.then(Vec::new);
    let mut best_params = model.params.clone();
    let mut best_idx = 0usize;
    let mut stopped_early = false;

    for j in 1..=config.outer_iters {
        let objective = Objective {
            constraints,
            mu: &mu,
            rps_weight,
        };
        inner_loop(&mut model, &mut opt, train, &objective, config, j)?;

        let hazards = train.xs.iter().map(|x| model.hazards(x)).collect::<Result<Vec<_>>>()?;
        let train_loss = drsa_from_hazards(&hazards, &train.outcomes).value;
        if !train_loss.is_finite() {
            return Err(SurvError::NonFiniteLoss {
                iteration: j,
                detail: format!("train DRSA loss {train_loss} after inner loop"),
            });
        }
        let (penalties, _) = train_penalties(&hazards, constraints, None)?;
        dual_update(&mut mu, &penalties, config.eta);
        assert!(mu.iter().all(|&m| m >= 0.0), "dual variables left the nonnegative orthant");

        let val_survival = model.survival_matrix(&validation.xs)?;
        let val_c_index = c_index_from_curves(&val_survival, &validation.outcomes, false).unwrap_or(0.0);
        let row = HistoryRow {
            iteration: j,
            val_satisfied: val_satisfied(constraints, &val_survival),
            val_c_index,
            train_satisfied: penalties.iter().filter(|&&p| p <= 0.0).count(),
            train_loss,
            penalties,
            mu: mu.clone(),
        };
        if history.is_empty() || is_better(&row, &history[best_idx]) {
            best_idx = history.len();
            best_params = model.params.clone();
        }
        history.push(row);
        if let Some(s) = snapshots.as_mut() {
            s.push(model.params.clone());
        }
        if history.len() - 1 - best_idx >= config.patience {
            stopped_early = j < config.outer_iters;
            break;
        }
    }

    let mut selected = model.clone();
    selected.params = best_params;
    Ok(TrainOutcome {
        model: selected,
        final_model: model,
        selected_iteration: best_idx + 1,
        history,
        constraint_names: constraints.iter().map(|c| c.spec.name().to_string()).collect(),
        initial_mu: initial,
        stopped_early,
        snapshots,
    })
}

/// Primal-dual training: SGD on the Lagrangian for fixed multipliers, then
/// projected dual ascent using full-train penalties.
pub fn primal_dual_train(
    init: HazardModel,
    train: &Cohort,
    validation: &Cohort,
    constraints: &[PreparedConstraint],
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    train_loop(init, train, validation, Mode::Constrained(constraints), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Drsa,
    DrsaRps(f64),
}

/// Unconstrained SGD, selecting the iteration with the best validation C-index.
pub fn baseline_train(
    init: HazardModel,
    train: &Cohort,
    validation: &Cohort,
    mode: BaselineMode,
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    let rps_weight = match mode {
        BaselineMode::Drsa => 0.0,
        BaselineMode::DrsaRps(l) => l,
    };
    train_loop(init, train, validation, Mode::Baseline { rps_weight }, config)
}

/// Per-iteration multipliers and penalties as delimited text:
/// `iteration,mu_<name>...,p_<name>...`.
pub fn mu_trajectory_probe(outcome: &TrainOutcome) -> String {
    let mut out = String::from("iteration");
    for n in &outcome.constraint_names {
        out.push_str(&format!(",mu_{n}"));
    }
    for n in &outcome.constraint_names {
        out.push_str(&format!(",p_{n}"));
    }
    out.push('\n');
    for row in &outcome.history {
        out.push_str(&row.iteration.to_string());
        for v in row.mu.iter().chain(&row.penalties) {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("iteration,val_satisfied,val_c_index,train_satisfied,train_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{:?},{},{:?}\n",
            r.iteration, r.val_satisfied, r.val_c_index, r.train_satisfied, r.train_loss
        ));
    }
    out
}
