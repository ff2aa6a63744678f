//! Discrete-time hazard networks.
//!
//! Every architecture maps a feature vector `x` to per-timestep hazards
//! `h_1, ..., h_tau`, each clamped to `[eps, 1 - eps]`. Parameters live in a
//! single flat vector so that optimizers, finite-difference checks and the
//! artifact format can treat all architectures alike. Gradients are computed
//! by reverse accumulation from per-timestep hazard cotangents `dL/dh_t`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};
use crate::estimators::SurvivalCurve;

pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-6;
pub const DEFAULT_HIDDEN: usize = 50;

const ARTIFACT_MAGIC: &str = "mcsurv-hazard-model";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Shared feature weights plus one bias per timestep.
    LinearTime,
    /// One tanh hidden layer over `[x, t / tau]`.
    MlpTime,
    /// Gated recurrent chain (update gate + tanh candidate), one cell per
    /// timestep, fed `[x, t / tau]`.
    Recurrent,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::LinearTime => "linear_time",
            Architecture::MlpTime => "mlp_time",
            Architecture::Recurrent => "recurrent_gated",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_time" | "linear" => Ok(Architecture::LinearTime),
            "mlp_time" | "mlp" => Ok(Architecture::MlpTime),
            "recurrent_gated" | "recurrent" => Ok(Architecture::Recurrent),
            other => Err(SurvError::Parse(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    arch: Architecture,
    d: usize,
    tau: usize,
    hidden: usize,
    eps: f64,
    pub params: Vec<f64>,
}

/// Forward intermediates for one example, enough to run the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Clamped hazards, index `t - 1`.
    pub hazards: Vec<f64>,
    /// Unclamped sigmoid outputs.
    raw: Vec<f64>,
    /// mlp: hidden activations per timestep; recurrent: states `s_0..s_tau`.
    hidden: Vec<f64>,
    /// recurrent only: gates and candidates per timestep.
    gates: Vec<f64>,
    cands: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn param_count(arch: Architecture, d: usize, hidden: usize, tau: usize) -> usize {
    let input = d + 1;
    match arch {
        Architecture::LinearTime => d + tau,
        Architecture::MlpTime => input * hidden + hidden + hidden + 1,
        Architecture::Recurrent => 2 * (hidden * input + hidden * hidden + hidden) + hidden + 1,
    }
}

/// Offsets of the parameter blocks of the recurrent cell.
struct RecLayout {
    wg: usize,
    ug: usize,
    bg: usize,
    wc: usize,
    uc: usize,
    bc: usize,
    wo: usize,
    bo: usize,
}

impl HazardModel {
    pub fn init(
        arch: Architecture,
        d: usize,
        tau: usize,
        hidden: usize,
        clamp_epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 || tau == 0 {
            return Err(SurvError::InvalidDims(format!("d={d}, tau={tau}; both must be >= 1")));
        }
        if !(clamp_epsilon > 0.0 && clamp_epsilon < 0.5) {
            return Err(SurvError::InvalidDims(format!("clamp epsilon {clamp_epsilon} outside (0, 0.5)")));
        }
        let hidden = match arch {
            Architecture::LinearTime => 0,
            _ if hidden == 0 => return Err(SurvError::InvalidDims("hidden width must be >= 1".into())),
            _ => hidden,
        };
        let mut model = HazardModel {
            arch,
            d,
            tau,
            hidden,
            eps: clamp_epsilon,
            params: vec![0.0; param_count(arch, d, hidden, tau)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in params {
                *p = rng.gen_range(-bound..bound);
            }
        };
        let input = d + 1;
        let h = hidden;
        match arch {
            Architecture::LinearTime => fill(&mut model.params[..d], d),
            Architecture::MlpTime => {
                fill(&mut model.params[..h * input], input);
                let w2 = h * input + h;
                fill(&mut model.params[w2..w2 + h], h);
            }
            Architecture::Recurrent => {
                let l = model.rec_layout();
                let fan = input + h;
                fill(&mut model.params[l.wg..l.bg], fan);
                fill(&mut model.params[l.wc..l.bc], fan);
                fill(&mut model.params[l.wo..l.bo], h);
            }
        }
        Ok(model)
    }

    pub fn from_parts(
        arch: Architecture,
        d: usize,
        tau: usize,
        hidden: usize,
        clamp_epsilon: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::init(arch, d, tau, hidden, clamp_epsilon, 0)?;
        let expected = param_count(arch, d, model.hidden, tau);
        if params.len() != expected {
            return Err(SurvError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }
    pub fn input_dim(&self) -> usize {
        self.d
    }
    pub fn tau(&self) -> usize {
        self.tau
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn clamp_epsilon(&self) -> f64 {
        self.eps
    }
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn rec_layout(&self) -> RecLayout {
        let (h, input) = (self.hidden, self.d + 1);
        let wg = 0;
        let ug = wg + h * input;
        let bg = ug + h * h;
        let wc = bg + h;
        let uc = wc + h * input;
        let bc = uc + h * h;
        let wo = bc + h;
        let bo = wo + h;
        RecLayout { wg, ug, bg, wc, uc, bc, wo, bo }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(SurvError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn clamp(&self, raw: f64) -> f64 {
        raw.clamp(self.eps, 1.0 - self.eps)
    }

    /// `dh/dz` of the clamped sigmoid; flat outside the clamp window.
    fn clamp_slope(&self, raw: f64) -> f64 {
        if raw > self.eps && raw < 1.0 - self.eps {
            raw * (1.0 - raw)
        } else {
            0.0
        }
    }

    pub fn hazards(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.hazards)
    }

    pub fn survival_curve(&self, x: &[f64]) -> Result<SurvivalCurve> {
        Ok(SurvivalCurve::from_values(survival_from_hazards(&self.hazards(x)?)))
    }

    /// Per-example survival values `S(0..=tau)`.
    pub fn survival_matrix(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .map(|x| self.hazards(x).map(|h| survival_from_hazards(&h)))
            .collect()
    }

    /// Pointwise mean of the members' survival curves.
    pub fn marginal_survival(&self, xs: &[Vec<f64>]) -> Result<SurvivalCurve> {
        if xs.is_empty() {
            return Err(SurvError::EmptySubgroup("selection".into()));
        }
        Ok(SurvivalCurve::from_values(mean_curve(&self.survival_matrix(xs)?)))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Tape> {
        self.check_input(x)?;
        Ok(match self.arch {
            Architecture::LinearTime => self.forward_linear(x),
            Architecture::MlpTime => self.forward_mlp(x),
            Architecture::Recurrent => self.forward_recurrent(x),
        })
    }

    fn forward_linear(&self, x: &[f64]) -> Tape {
        let d = self.d;
        let wx: f64 = self.params[..d].iter().zip(x).map(|(w, v)| w * v).sum();
        let raw: Vec<f64> = (0..self.tau).map(|t| sigmoid(wx + self.params[d + t])).collect();
        Tape {
            hazards: raw.iter().map(|&r| self.clamp(r)).collect(),
            raw,
            hidden: Vec::new(),
            gates: Vec::new(),
            cands: Vec::new(),
        }
    }

    fn forward_mlp(&self, x: &[f64]) -> Tape {
        let (d, h, tau) = (self.d, self.hidden, self.tau);
        let input = d + 1;
        let p = &self.params;
        let b1 = h * input;
        let w2 = b1 + h;
        let b2 = w2 + h;
        let base: Vec<f64> = (0..h)
            .map(|k| {
                let row = &p[k * input..k * input + d];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[b1 + k]
            })
            .collect();
        let mut hidden = vec![0.0; tau * h];
        let mut raw = vec![0.0; tau];
        for t in 0..tau {
            let enc = (t + 1) as f64 / tau as f64;
            let mut z = p[b2];
            for k in 0..h {
                let a = (base[k] + p[k * input + d] * enc).tanh();
                hidden[t * h + k] = a;
                z += p[w2 + k] * a;
            }
            raw[t] = sigmoid(z);
        }
        Tape {
            hazards: raw.iter().map(|&r| self.clamp(r)).collect(),
            raw,
            hidden,
            gates: Vec::new(),
            cands: Vec::new(),
        }
    }

    fn forward_recurrent(&self, x: &[f64]) -> Tape {
        let (d, h, tau) = (self.d, self.hidden, self.tau);
        let input = d + 1;
        let p = &self.params;
        let l = self.rec_layout();
        // input projections without the timestep column
        let proj = |w: usize, b: usize| -> Vec<f64> {
            (0..h)
                .map(|k| {
                    let row = &p[w + k * input..w + k * input + d];
                    row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + p[b + k]
                })
                .collect()
        };
        let base_g = proj(l.wg, l.bg);
        let base_c = proj(l.wc, l.bc);

        let mut states = vec![0.0; (tau + 1) * h];
        let mut gates = vec![0.0; tau * h];
        let mut cands = vec![0.0; tau * h];
        let mut raw = vec![0.0; tau];
        for t in 0..tau {
            let enc = (t + 1) as f64 / tau as f64;
            let (prev, next) = states.split_at_mut((t + 1) * h);
            let prev = &prev[t * h..];
            let next = &mut next[..h];
            let mut z = p[l.bo];
            for k in 0..h {
                let mut pg = base_g[k] + p[l.wg + k * input + d] * enc;
                let mut pc = base_c[k] + p[l.wc + k * input + d] * enc;
                let ug = &p[l.ug + k * h..l.ug + (k + 1) * h];
                let uc = &p[l.uc + k * h..l.uc + (k + 1) * h];
                for j in 0..h {
                    pg += ug[j] * prev[j];
                    pc += uc[j] * prev[j];
                }
                let g = sigmoid(pg);
                let c = pc.tanh();
                gates[t * h + k] = g;
                cands[t * h + k] = c;
                next[k] = (1.0 - g) * prev[k] + g * c;
                z += p[l.wo + k] * next[k];
            }
            raw[t] = sigmoid(z);
        }
        Tape {
            hazards: raw.iter().map(|&r| self.clamp(r)).collect(),
            raw,
            hidden: states,
            gates,
            cands,
        }
    }

    /// Accumulates `sum_t dh[t] * dh_t/dtheta` into `grad`.
    pub fn backward(&self, x: &[f64], tape: &Tape, dh: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(dh.len(), self.tau);
        debug_assert_eq!(grad.len(), self.params.len());
        let dz: Vec<f64> = dh
            .iter()
            .zip(&tape.raw)
            .map(|(&g, &r)| if g == 0.0 { 0.0 } else { g * self.clamp_slope(r) })
            .collect();
        if dz.iter().all(|&v| v == 0.0) {
            return;
        }
        match self.arch {
            Architecture::LinearTime => {
                let d = self.d;
                let total: f64 = dz.iter().sum();
                for j in 0..d {
                    grad[j] += total * x[j];
                }
                for t in 0..self.tau {
                    grad[d + t] += dz[t];
                }
            }
            Architecture::MlpTime => self.backward_mlp(x, tape, &dz, grad),
            Architecture::Recurrent => self.backward_recurrent(x, tape, &dz, grad),
        }
    }

    fn backward_mlp(&self, x: &[f64], tape: &Tape, dz: &[f64], grad: &mut [f64]) {
        let (d, h, tau) = (self.d, self.hidden, self.tau);
        let input = d + 1;
        let p = &self.params;
        let b1 = h * input;
        let w2 = b1 + h;
        let b2 = w2 + h;
        let mut dbase = vec![0.0; h];
        let mut dtime = vec![0.0; h];
        for t in 0..tau {
            if dz[t] == 0.0 {
                continue;
            }
            let enc = (t + 1) as f64 / tau as f64;
            grad[b2] += dz[t];
            for k in 0..h {
                let a = tape.hidden[t * h + k];
                grad[w2 + k] += dz[t] * a;
                let dpre = dz[t] * p[w2 + k] * (1.0 - a * a);
                dbase[k] += dpre;
                dtime[k] += dpre * enc;
            }
        }
        for k in 0..h {
            for j in 0..d {
                grad[k * input + j] += dbase[k] * x[j];
            }
            grad[k * input + d] += dtime[k];
            grad[b1 + k] += dbase[k];
        }
    }

    fn backward_recurrent(&self, x: &[f64], tape: &Tape, dz: &[f64], grad: &mut [f64]) {
        let (d, h, tau) = (self.d, self.hidden, self.tau);
        let input = d + 1;
        let p = &self.params;
        let l = self.rec_layout();
        let mut ds = vec![0.0; h];
        let mut dpg = vec![0.0; h];
        let mut dpc = vec![0.0; h];
        // input-weight gradients without the timestep column, summed over time
        let mut dbase_g = vec![0.0; h];
        let mut dbase_c = vec![0.0; h];
        for t in (0..tau).rev() {
            let enc = (t + 1) as f64 / tau as f64;
            let prev = &tape.hidden[t * h..(t + 1) * h];
            let next = &tape.hidden[(t + 1) * h..(t + 2) * h];
            if dz[t] != 0.0 {
                grad[l.bo] += dz[t];
                for k in 0..h {
                    grad[l.wo + k] += dz[t] * next[k];
                    ds[k] += dz[t] * p[l.wo + k];
                }
            }
            for k in 0..h {
                let g = tape.gates[t * h + k];
                let c = tape.cands[t * h + k];
                dpg[k] = ds[k] * (c - prev[k]) * g * (1.0 - g);
                dpc[k] = ds[k] * g * (1.0 - c * c);
            }
            let mut ds_prev: Vec<f64> = (0..h).map(|k| ds[k] * (1.0 - tape.gates[t * h + k])).collect();
            for k in 0..h {
                let (gk, ck) = (dpg[k], dpc[k]);
                dbase_g[k] += gk;
                dbase_c[k] += ck;
                grad[l.wg + k * input + d] += gk * enc;
                grad[l.wc + k * input + d] += ck * enc;
                for j in 0..h {
                    grad[l.ug + k * h + j] += gk * prev[j];
                    grad[l.uc + k * h + j] += ck * prev[j];
                    ds_prev[j] += p[l.ug + k * h + j] * gk + p[l.uc + k * h + j] * ck;
                }
            }
            ds = ds_prev;
        }
        for k in 0..h {
            for j in 0..d {
                grad[l.wg + k * input + j] += dbase_g[k] * x[j];
                grad[l.wc + k * input + j] += dbase_c[k] * x[j];
            }
            grad[l.bg + k] += dbase_g[k];
            grad[l.bc + k] += dbase_c[k];
        }
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Tape>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    /// Gradient over the parameters of a scalar whose hazard cotangents are
    /// given per example (`cotangents[i][t - 1] = dL/dh_t(x_i)`). Examples are
    /// reduced in order.
    pub fn grad_scalar(&self, xs: &[Vec<f64>], cotangents: &[Vec<f64>]) -> Result<Vec<f64>> {
        if xs.len() != cotangents.len() {
            return Err(SurvError::DimensionMismatch {
                expected: xs.len(),
                got: cotangents.len(),
            });
        }
        let mut grad = vec![0.0; self.params.len()];
        for (x, dh) in xs.iter().zip(cotangents) {
            if dh.len() != self.tau {
                return Err(SurvError::DimensionMismatch {
                    expected: self.tau,
                    got: dh.len(),
                });
            }
            let tape = self.forward(x)?;
            self.backward(x, &tape, dh, &mut grad);
        }
        Ok(grad)
    }

    /// Versioned plain-text artifact: one header line, then one parameter per
    /// line with 17 significant digits.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{ARTIFACT_MAGIC} v{ARTIFACT_VERSION} arch={} d={} tau={} hidden={} eps={:.16e} p={}",
            self.arch.tag(),
            self.d,
            self.tau,
            self.hidden,
            self.eps,
            self.params.len()
        );
        for v in &self.params {
            let _ = writeln!(out, "{v:.16e}");
        }
        out
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        let corrupt = |m: &str| SurvError::CorruptArtifact(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty artifact"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(ARTIFACT_MAGIC) {
            return Err(corrupt("missing header"));
        }
        let version = fields.next().ok_or_else(|| corrupt("missing version"))?;
        if version != format!("v{ARTIFACT_VERSION}") {
            return Err(SurvError::VersionMismatch {
                expected: ARTIFACT_VERSION,
                found: version.to_string(),
            });
        }
        let mut get = |key: &str| -> Result<String> {
            let field = fields.next().ok_or_else(|| corrupt("truncated header"))?;
            field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| corrupt(&format!("expected `{key}=` in header")))
        };
        let arch: Architecture = get("arch")?.parse().map_err(|_| corrupt("bad architecture"))?;
        let num = |s: String| s.parse::<usize>().map_err(|_| corrupt("bad integer in header"));
        let d = num(get("d")?)?;
        let tau = num(get("tau")?)?;
        let hidden = num(get("hidden")?)?;
        let eps: f64 = get("eps")?.parse().map_err(|_| corrupt("bad eps"))?;
        let p = num(get("p")?)?;
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| corrupt("bad parameter line")))
            .collect::<Result<Vec<_>>>()?;
        if params.len() != p {
            return Err(corrupt(&format!("expected {p} parameters, found {}", params.len())));
        }
        Self::from_parts(arch, d, tau, hidden, eps, params).map_err(|e| corrupt(&e.to_string()))
    }
}

/// `S(0) = 1`, `S(t) = prod_{l <= t} (1 - h_l)`.
pub fn survival_from_hazards(hazards: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(hazards.len() + 1);
    s.push(1.0);
    let mut acc = 1.0;
    for &h in hazards {
        acc *= 1.0 - h;
        s.push(acc);
    }
    s
}

/// Chain rule from survival cotangents `ds[t] = dL/dS(t)` (index 0 ignored)
/// to hazard cotangents.
pub fn hazard_cotangent_from_survival(hazards: &[f64], survival: &[f64], ds: &[f64]) -> Vec<f64> {
    let tau = hazards.len();
    let mut out = vec![0.0; tau];
    let mut suffix = 0.0;
    for t in (1..=tau).rev() {
        suffix += ds[t] * survival[t];
        out[t - 1] = -suffix / (1.0 - hazards[t - 1]);
    }
    out
}

pub fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    let len = curves.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; len];
    for c in curves {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}
