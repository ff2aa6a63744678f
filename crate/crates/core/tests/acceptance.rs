//! Acceptance gate: one check per criterion, each printing a PASS/FAIL line.
//! Runs without the libtest harness so the lines are always shown.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcsurv::calibration::{ece, ece_bins, l2_distance, variance_adjusted_distance, DistanceKind};
use mcsurv::commands::{cmd_counterexample, cmd_evaluate, cmd_synthesize, cmd_train, CounterexampleArgs};
use mcsurv::commands::{EvaluateArgs, SynthArgs, TrainArgs, TrainMode};
use mcsurv::data::{
    counterexample_dataset, generate_synthetic, split, DiscreteDataset, FeatureEncoder, SplitSpec, SyntheticConfig,
    SyntheticGroup, TableId,
};
use mcsurv::estimators::{km_curve, SurvivalCurve};
use mcsurv::losses::{drsa_loss, rps_loss};
use mcsurv::metrics::{c_index_from_curves, total_score, EvalConfig};
use mcsurv::model::{mean_curve, Architecture, HazardModel, DEFAULT_CLAMP_EPSILON};
use mcsurv::subgroups::{build_constraint_set, member_indices, membership, Condition, SubgroupSpec, Test, Value};
use mcsurv::trainer::{
    baseline_train, frozen_dual_step, inner_loop, objective_gradient, prepare_constraints, primal_dual_train,
    BaselineMode, Cohort, MuInit, Objective, PreparedConstraint, Sgd, TrainerConfig,
};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("[criterion {id}] {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn group_spec(label: &str) -> SubgroupSpec {
    SubgroupSpec::manual(
        label,
        vec![Condition {
            feature: "group".into(),
            test: Test::Equals(Value::Label(label.into())),
        }],
    )
}

// ---------------------------------------------------------------------------

fn criterion_01_counterexample_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut details = Vec::new();
    for table in [TableId::Dcal, TableId::Brier, TableId::Rps] {
        let start = Instant::now();
        let (s, _) = cmd_counterexample(&CounterexampleArgs {
            table,
            out: dir.path().join(table.name()),
        })
        .unwrap();
        let elapsed = start.elapsed();
        let pass = match table {
            TableId::Dcal => s.metric_values[0].abs() <= 1e-12 && s.km_s5 == 0.0,
            TableId::Brier => {
                s.metric_values.len() == 5
                    && s.metric_values.iter().all(|v| v.abs() <= 1e-12)
                    && (s.km_s5 - 0.4225).abs() <= 5e-4
                    && elapsed < Duration::from_secs(1)
            }
            TableId::Rps => s.metric_values == [0.0] && s.km_s5 == 0.0,
        };
        ok &= pass;
        details.push(format!("{} {}={:?} KM S(5)={:.4}", table.name(), s.metric, s.metric_values, s.km_s5));
    }
    // the exact product behind the 42% figure
    let exact = 14.0 / 15.0 * 11.0 / 12.0 * 8.0 / 9.0 * 5.0 / 6.0 * 2.0 / 3.0;
    let km = km_curve(&counterexample_dataset(TableId::Brier).outcomes(), 5).unwrap();
    ok &= (km.values[5] - exact).abs() < 1e-15;
    report(1, "counterexample goldens", ok, &details.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn random_outcomes(rng: &mut ChaCha8Rng, tau: usize, censor_rate: f64) -> Vec<(usize, bool)> {
    let n = rng.gen_range(1..=50);
    (0..n)
        .map(|_| (rng.gen_range(1..=tau), !rng.gen_bool(censor_rate)))
        .collect()
}

fn criterion_02_km_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = true;
    for case in 0..200 {
        let tau = rng.gen_range(1..=12);
        // uncensored: the survivor fraction #{t_i > t} / n
        let uncensored = random_outcomes(&mut rng, tau, 0.0);
        let km = km_curve(&uncensored, tau).unwrap();
        let n = uncensored.len();
        for t in 0..=tau {
            let alive = uncensored.iter().filter(|(ti, _)| *ti > t).count();
            if km.values[t] != alive as f64 / n as f64 {
                ok = false;
                println!("case {case}: t={t} km={} oracle={}", km.values[t], alive as f64 / n as f64);
            }
        }
        // censored: monotone in [0, 1] and invariant to record order
        let mixed = random_outcomes(&mut rng, tau, 0.4);
        let km = km_curve(&mixed, tau).unwrap();
        ok &= km.values[0] == 1.0;
        ok &= km.values.windows(2).all(|w| w[1] <= w[0] && w[1] >= 0.0);
        let mut shuffled = mixed.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        ok &= km_curve(&shuffled, tau).unwrap().values == km.values;
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(5);
    report(2, "KM oracle equivalence", ok, &format!("200 datasets in {elapsed:.2?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_difference(model: &HazardModel, f: impl Fn(&HazardModel) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..model.num_params())
        .map(|i| {
            let mut plus = model.clone();
            plus.params[i] += h;
            let mut minus = model.clone();
            minus.params[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn gradient_problem(seed: u64) -> (DiscreteDataset, DiscreteDataset) {
    let cfg = SyntheticConfig {
        n: 40,
        noise_features: 2,
        groups: vec![
            SyntheticGroup { name: "a".into(), weight: 0.5, hazard: 0.2 },
            SyntheticGroup { name: "b".into(), weight: 0.5, hazard: 0.5 },
        ],
        censoring_rate: 0.3,
        tau: 6,
    };
    let ds = generate_synthetic(&cfg, seed).unwrap();
    let (train, val, _) = split(&ds, &SplitSpec::new(0.5, 0.5, 0.0, seed).unwrap()).unwrap();
    (train, val)
}

fn criterion_03_gradient_suite() {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for arch in [Architecture::LinearTime, Architecture::MlpTime, Architecture::Recurrent] {
        for trial in 0..10u64 {
            let (train_ds, val_ds) = gradient_problem(100 + trial);
            let enc = FeatureEncoder::fit(&train_ds, true);
            let train = Cohort::encode(&train_ds, &enc);
            let hidden = if arch == Architecture::LinearTime { 0 } else { 5 };
            let model = HazardModel::init(arch, enc.dim(), train_ds.tau, hidden, 1e-9, trial).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let batch: Vec<usize> = (0..8).map(|_| rng.gen_range(0..train.len())).collect();
            let xs: Vec<Vec<f64>> = batch.iter().map(|&i| train.xs[i].clone()).collect();
            let outcomes: Vec<(usize, bool)> = batch.iter().map(|&i| train.outcomes[i]).collect();

            let drsa = drsa_loss(&model, &xs, &outcomes).unwrap();
            let g = model.grad_scalar(&xs, drsa.cotangents.as_ref().unwrap()).unwrap();
            let fd = central_difference(&model, |m| drsa_loss(m, &xs, &outcomes).unwrap().value);
            let e = worst.entry("drsa").or_insert(0.0);
            *e = e.max(max_rel_error(&g, &fd));

            let rps = rps_loss(&model, &xs, &outcomes).unwrap();
            let g = model.grad_scalar(&xs, rps.cotangents.as_ref().unwrap()).unwrap();
            let fd = central_difference(&model, |m| rps_loss(m, &xs, &outcomes).unwrap().value);
            let e = worst.entry("rps").or_insert(0.0);
            *e = e.max(max_rel_error(&g, &fd));

            let specs = build_constraint_set(
                &[group_spec("a"), group_spec("b")],
                &[],
                0.001,
                DistanceKind::L2,
                &BTreeMap::new(),
            )
            .unwrap();
            let prepared = prepare_constraints(&specs, &train_ds, &val_ds).unwrap();
            let mu: Vec<f64> = (0..prepared.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
            let objective = Objective { constraints: &prepared, mu: &mu, rps_weight: 0.0 };
            let (_, g) = objective_gradient(&model, &batch, &train, &objective).unwrap();
            let fd = central_difference(&model, |m| objective_gradient(m, &batch, &train, &objective).unwrap().0);
            let e = worst.entry("lagrangian").or_insert(0.0);
            *e = e.max(max_rel_error(&g, &fd));
        }
    }
    let elapsed = start.elapsed();
    let ok = worst.values().all(|&e| e < 1e-4) && elapsed < Duration::from_secs(30);
    report(3, "gradient suite", ok, &format!("worst relative errors {worst:?} in {elapsed:.2?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn brute_force_c_index(survival: &[Vec<f64>], outcomes: &[(usize, bool)]) -> Option<f64> {
    let mut num = 0u64;
    let mut den = 0u64;
    for i in 0..outcomes.len() {
        for j in 0..outcomes.len() {
            let (ti, di) = outcomes[i];
            let (tj, _) = outcomes[j];
            if ti < tj && di {
                den += 1;
                if 1.0 - survival[i][ti] > 1.0 - survival[j][ti] {
                    num += 1;
                }
            }
        }
    }
    (den > 0).then(|| num as f64 / den as f64)
}

fn criterion_04_c_index_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tau = 6;
    let mut ok = true;
    let mut checked = 0;
    while checked < 100 {
        let n = rng.gen_range(2..=12);
        let outcomes: Vec<(usize, bool)> = (0..n).map(|_| (rng.gen_range(1..=tau), rng.gen_bool(0.7))).collect();
        // coarse hazards so that ties in F occur
        let survival: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut s = vec![1.0];
                for _ in 0..tau {
                    let h = rng.gen_range(0..4) as f64 / 8.0;
                    s.push(s.last().unwrap() * (1.0 - h));
                }
                s
            })
            .collect();
        let Some(oracle) = brute_force_c_index(&survival, &outcomes) else {
            continue;
        };
        ok &= c_index_from_curves(&survival, &outcomes, false).unwrap() == oracle;
        checked += 1;
    }

    // ranking by event time: earlier events get lower survival everywhere
    let outcomes: Vec<(usize, bool)> = (1..=tau).map(|t| (t, true)).collect();
    let curve = |rate: f64| (0..=tau).map(|t| (-rate * t as f64).exp()).collect::<Vec<f64>>();
    let perfect: Vec<Vec<f64>> = outcomes.iter().map(|&(t, _)| curve(1.0 / t as f64)).collect();
    let reversed: Vec<Vec<f64>> = outcomes.iter().map(|&(t, _)| curve(t as f64)).collect();
    let p = c_index_from_curves(&perfect, &outcomes, false).unwrap();
    let r = c_index_from_curves(&reversed, &outcomes, false).unwrap();
    ok &= p == 1.0 && r == 0.0;
    report(4, "C-index oracle", ok, &format!("100 random instances; perfect {p}, reversed {r}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

struct SeedResult {
    train_satisfied: bool,
    graduate_minority_ece: f64,
    drsa_minority_ece: f64,
    graduate_c: f64,
    drsa_c: f64,
}

const C5_HIDDEN: usize = 8;
const C5_INNER_LR: f64 = 0.1;

fn multicalibration_seed(seed: u64) -> SeedResult {
    let cfg = SyntheticConfig {
        n: 1000,
        noise_features: 2,
        groups: vec![
            SyntheticGroup { name: "majority".into(), weight: 0.9, hazard: 0.05 },
            SyntheticGroup { name: "minority".into(), weight: 0.1, hazard: 0.4 },
        ],
        censoring_rate: 0.2,
        tau: 20,
    };
    let ds = generate_synthetic(&cfg, seed).unwrap();
    let (train_ds, val_ds, test_ds) = split(&ds, &SplitSpec::new(0.6, 0.2, 0.2, seed).unwrap()).unwrap();
    let enc = FeatureEncoder::fit(&train_ds, false);
    let train = Cohort::encode(&train_ds, &enc);
    let val = Cohort::encode(&val_ds, &enc);
    let test = Cohort::encode(&test_ds, &enc);
    let specs = build_constraint_set(
        &[group_spec("majority"), group_spec("minority")],
        &[],
        0.001,
        DistanceKind::L2,
        &BTreeMap::new(),
    )
    .unwrap();
    let prepared = prepare_constraints(&specs, &train_ds, &val_ds).unwrap();
    let init = HazardModel::init(Architecture::MlpTime, enc.dim(), 20, C5_HIDDEN, DEFAULT_CLAMP_EPSILON, seed).unwrap();
    let config = TrainerConfig {
        eta: 0.01,
        outer_iters: 300,
        patience: 300,
        inner_steps: None,
        inner_lr: C5_INNER_LR,
        seed,
        ..TrainerConfig::default()
    };
    let graduate = primal_dual_train(init.clone(), &train, &val, &prepared, &config).unwrap();
    let drsa = baseline_train(init, &train, &val, BaselineMode::Drsa, &config).unwrap();

    let minority = member_indices(&membership(&group_spec("minority"), &test_ds).unwrap());
    let minority_km = km_curve(&minority.iter().map(|&i| test.outcomes[i]).collect::<Vec<_>>(), 20).unwrap();
    let eval = |m: &HazardModel| {
        let s = m.survival_matrix(&test.xs).unwrap();
        let marginal = mean_curve(&minority.iter().map(|&i| s[i].clone()).collect::<Vec<_>>());
        (
            ece(&marginal, &minority_km.values, 10).unwrap(),
            c_index_from_curves(&s, &test.outcomes, false).unwrap(),
        )
    };
    let (ge, gc) = eval(&graduate.model);
    let (de, dc) = eval(&drsa.model);
    SeedResult {
        train_satisfied: graduate.selected_row().train_satisfied == prepared.len(),
        graduate_minority_ece: ge,
        drsa_minority_ece: de,
        graduate_c: gc,
        drsa_c: dc,
    }
}

fn criterion_05_multicalibration() {
    let start = Instant::now();
    let results: Vec<SeedResult> = (0..10).map(multicalibration_seed).collect();
    for (seed, r) in results.iter().enumerate() {
        println!(
            "  seed {seed}: train constraints satisfied {} | minority ECE graduate {:.4} drsa {:.4} | C-index graduate {:.4} drsa {:.4}",
            r.train_satisfied, r.graduate_minority_ece, r.drsa_minority_ece, r.graduate_c, r.drsa_c
        );
    }
    let satisfied = results.iter().filter(|r| r.train_satisfied).count();
    let lower_ece = results.iter().filter(|r| r.graduate_minority_ece < r.drsa_minority_ece).count();
    let balanced = results.iter().all(|r| (r.graduate_c - r.drsa_c).abs() <= 0.1);
    let elapsed = start.elapsed();
    let ok = satisfied >= 8 && lower_ece >= 8 && balanced && elapsed < Duration::from_secs(600);
    report(
        5,
        "multicalibration vs DRSA",
        ok,
        &format!("(a) {satisfied}/10 satisfied, (b) {lower_ece}/10 lower minority ECE, (c) C-index within 0.1: {balanced}; {elapsed:.1?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn dual_problem() -> (DiscreteDataset, DiscreteDataset, FeatureEncoder) {
    let cfg = SyntheticConfig {
        n: 150,
        noise_features: 1,
        groups: vec![
            SyntheticGroup { name: "a".into(), weight: 0.6, hazard: 0.1 },
            SyntheticGroup { name: "b".into(), weight: 0.4, hazard: 0.3 },
        ],
        censoring_rate: 0.2,
        tau: 8,
    };
    let ds = generate_synthetic(&cfg, 6).unwrap();
    let (train, val, _) = split(&ds, &SplitSpec::new(0.6, 0.2, 0.2, 6).unwrap()).unwrap();
    let enc = FeatureEncoder::fit(&train, false);
    (train, val, enc)
}

fn prepared_with_c(train: &DiscreteDataset, val: &DiscreteDataset, c: f64) -> Vec<PreparedConstraint> {
    let specs = build_constraint_set(&[group_spec("a"), group_spec("b")], &[], c, DistanceKind::L2, &BTreeMap::new()).unwrap();
    prepare_constraints(&specs, train, val).unwrap()
}

fn criterion_06_dual_dynamics() {
    let (train_ds, val_ds, enc) = dual_problem();
    let train = Cohort::encode(&train_ds, &enc);
    let val = Cohort::encode(&val_ds, &enc);
    let init = HazardModel::init(Architecture::MlpTime, enc.dim(), 8, 6, DEFAULT_CLAMP_EPSILON, 6).unwrap();

    // frozen parameters, a violated constraint: mu moves by exactly eta * p
    let violated = prepared_with_c(&train_ds, &val_ds, 0.0);
    let eta = 0.01;
    let mut mu = vec![0.25; violated.len()];
    let mut exact = true;
    for _ in 0..20 {
        let before = mu.clone();
        let p = frozen_dual_step(&init, &train, &violated, &mut mu, eta).unwrap();
        exact &= p.iter().all(|&v| v > 0.0);
        exact &= mu.iter().zip(&before).zip(&p).all(|((m, b), p)| *m == b + eta * p);
    }

    // slack so large that every penalty is negative
    let slack = prepared_with_c(&train_ds, &val_ds, 1e6);
    let config = TrainerConfig {
        outer_iters: 12,
        patience: 12,
        seed: 17,
        keep_snapshots: true,
        ..TrainerConfig::default()
    };
    let graduate = primal_dual_train(init.clone(), &train, &val, &slack, &config).unwrap();
    let mu_zero_after_first = graduate.initial_mu.iter().any(|&m| m > 0.0)
        && graduate.history.iter().all(|r| r.mu.iter().all(|&m| m == 0.0));

    // from the first snapshot on, the trajectory is plain DRSA
    let snaps = graduate.snapshots.as_ref().unwrap();
    let mut replay = init.clone();
    replay.params = snaps[0].clone();
    let mut opt = Sgd::new(config.inner_lr, None, replay.num_params());
    let mut replay_match = true;
    for (k, snap) in snaps.iter().enumerate().skip(1) {
        inner_loop(&mut replay, &mut opt, &train, &Objective::drsa(), &config, k + 1).unwrap();
        replay_match &= &replay.params == snap;
    }

    // starting at mu = 0 the whole trajectory equals the DRSA trainer's
    let zero_start = TrainerConfig { mu_init: MuInit::Constant(0.0), ..config.clone() };
    let g0 = primal_dual_train(init.clone(), &train, &val, &slack, &zero_start).unwrap();
    let d0 = baseline_train(init, &train, &val, BaselineMode::Drsa, &zero_start).unwrap();
    let identical = g0.snapshots == d0.snapshots;

    let ok = exact && mu_zero_after_first && replay_match && identical;
    report(
        6,
        "dual dynamics",
        ok,
        &format!(
            "exact eta*p steps {exact}, mu hits 0 after one update {mu_zero_after_first}, DRSA replay bit-equal {replay_match}, zero-start trajectory bit-equal {identical}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn criterion_07_total_score_arithmetic() {
    let v = total_score(0.684, 0.621);
    let ok = (v - 0.486).abs() <= 0.01 && v <= 2.0 * 0.684f64.min(0.379);
    report(7, "total score arithmetic", ok, &format!("total_score(0.684, 0.621) = {v:.4}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn criterion_08_ece_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for _ in 0..200 {
        let tau = rng.gen_range(1..30);
        let mut s = vec![1.0];
        for _ in 0..tau {
            let prev: f64 = *s.last().unwrap();
            s.push(prev * rng.gen_range(0.5..1.0));
        }
        let bins = rng.gen_range(1..=20);
        ok &= ece(&s, &s, bins).unwrap() == 0.0;

        // shift a reference lying in (0.1, 0.9) down by d; every bin gap is d
        let reference: Vec<f64> = (0..=tau).map(|_| rng.gen_range(0.1..0.9)).collect();
        let d = rng.gen_range(0.0..0.1);
        let predicted: Vec<f64> = reference.iter().map(|r| r + d).collect();
        ok &= (ece(&predicted, &reference, bins).unwrap() - d).abs() < 1e-12;

        let b = ece_bins(&predicted, &reference, bins).unwrap();
        ok &= b.iter().map(|x| x.count).sum::<usize>() == tau + 1;
        ok &= (b.iter().map(|x| x.weight).sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON;
    }
    report(8, "ECE properties", ok, "200 random curves: zero on identical, offset d recovered, weights sum to 1");
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn criterion_09_variance_adjusted_distance() {
    let km = km_curve(&counterexample_dataset(TableId::Dcal).outcomes(), 5).unwrap();
    let greenwood = km.variance.as_ref().unwrap()[1];
    let mut ok = (greenwood - 0.032).abs() <= 1e-12;

    // only t = 2 has positive variance; gap 0.1 over sd 0.05
    let reference = SurvivalCurve {
        values: vec![1.0, 0.75, 0.0],
        variance: Some(vec![0.0, 0.0, 0.05 * 0.05]),
        variance_flag: Some(vec![false; 3]),
        event_table: None,
    };
    let (d, t) = variance_adjusted_distance(&[1.0, 0.75, 0.1], &reference).unwrap();
    ok &= d == 2.0 && t == 2;
    ok &= l2_distance(&reference.values, &reference.values).unwrap() == 0.0;
    report(9, "variance-adjusted distance", ok, &format!("Greenwood(1) = {greenwood}, distance = {d} at t = {t}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn read_numeric_artifacts(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_10_determinism() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let synth = SynthArgs {
        config: SyntheticConfig {
            n: 300,
            noise_features: 1,
            groups: vec![
                SyntheticGroup { name: "a".into(), weight: 0.7, hazard: 0.1 },
                SyntheticGroup { name: "b".into(), weight: 0.3, hazard: 0.3 },
            ],
            censoring_rate: 0.2,
            tau: 10,
        },
        split: (0.6, 0.2, 0.2),
        seed: 10,
        out: data.clone(),
    };
    cmd_synthesize(&synth).unwrap();

    let mut ok = true;
    let mut checked = Vec::new();
    for mode in [TrainMode::Graduate, TrainMode::Drsa, TrainMode::Rps] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let run = root.path().join(format!("{mode:?}-{rep}"));
            let train = TrainArgs {
                data_dir: data.clone(),
                mode,
                arch: Architecture::MlpTime,
                hidden: 6,
                standardize: true,
                distance: DistanceKind::L2,
                c: 0.01,
                c_file: None,
                subgroup_file: None,
                auto_subgroups: mode == TrainMode::Graduate,
                min_size: 20,
                max_overlap: 0.8,
                max_arity: 2,
                rps_lambda: 0.5,
                trainer: TrainerConfig { outer_iters: 6, patience: 3, seed: 5, ..TrainerConfig::default() },
                out: run.clone(),
            };
            cmd_train(&train).unwrap();
            let eval = root.path().join(format!("{mode:?}-{rep}-eval"));
            cmd_evaluate(&EvaluateArgs {
                run_dir: run.clone(),
                data_dir: data.clone(),
                split: "test".into(),
                subgroup_file: None,
                eval: EvalConfig::default(),
                out: eval.clone(),
            })
            .unwrap();
            mcsurv::commands::verify_manifest(&run).unwrap();
            mcsurv::commands::verify_manifest(&eval).unwrap();
            outputs.push((read_numeric_artifacts(&run), read_numeric_artifacts(&eval)));
        }
        ok &= outputs[0] == outputs[1];
        checked.push(format!("{mode:?}: {} artifacts", outputs[0].0.len() + outputs[0].1.len()));
    }
    // the synthesized splits themselves
    let again = root.path().join("data2");
    cmd_synthesize(&SynthArgs { out: again.clone(), ..synth }).unwrap();
    ok &= read_numeric_artifacts(&data) == read_numeric_artifacts(&again);
    report(10, "determinism", ok, &format!("byte-identical reruns ({})", checked.join(", ")));
    assert!(ok);
}

fn main() -> std::process::ExitCode {
    let criteria: [(u32, fn()); 10] = [
        (1, criterion_01_counterexample_goldens),
        (2, criterion_02_km_oracle),
        (3, criterion_03_gradient_suite),
        (4, criterion_04_c_index_oracle),
        (5, criterion_05_multicalibration),
        (6, criterion_06_dual_dynamics),
        (7, criterion_07_total_score_arithmetic),
        (8, criterion_08_ece_properties),
        (9, criterion_09_variance_adjusted_distance),
        (10, criterion_10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        if std::panic::catch_unwind(check).is_err() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
