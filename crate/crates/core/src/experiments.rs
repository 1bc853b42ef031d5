//! Monte Carlo sweeps over system parameters, the OMA baseline, the
//! imperfect-CSI study and dataset export.
//!
//! Every trial is keyed by `(seed, trial)`. All schemes and all sweep values
//! of one trial share the same drop, and a scheme with `m` BDs uses the first
//! `m` BDs of a drop generated with the largest BD count in the sweep. A drop
//! that leaves plain NOMA infeasible is redrawn with the next attempt index.
//! Results are reduced in trial order, so they do not depend on the number of
//! worker threads.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform::{solve_closed_form, Method, Objective, SolveResult};
use crate::error::{ConfigError, SolveError};
use crate::model::{objectives, p_min, NormalizedGains, ObjectiveValue, PowerAllocation, Problem, ReflectionVector};
use crate::scenario::{channels_for_layout, generate_layout, stream_rng, EavPlacement, NetworkConfig, PerUser, Point, Scenario};
use crate::search::{grid_search, pso, GridConfig, PsoConfig};
use crate::units::{dbm_to_watts, Watts};

const CSI_STREAM: u64 = 2;
const PSO_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("scheme {scheme} cannot run: {reason}")]
    SchemeMismatch { scheme: Scheme, reason: String },
    #[error("trial {trial}: no feasible drop within {attempts} attempts")]
    NoFeasibleDrop { trial: u64, attempts: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("dataset: {0}")]
    Dataset(String),
}

/// A transmission scheme compared in the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    /// NOMA with `bds` backscatter devices; zero is plain NOMA.
    Noma { bds: usize },
    /// Equal time slots with every BD fully reflecting.
    Oma { bds: usize },
}

impl Scheme {
    pub const NOMA_PURE: Scheme = Scheme::Noma { bds: 0 };

    pub fn bds(&self) -> usize {
        match *self {
            Scheme::Noma { bds } | Scheme::Oma { bds } => bds,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Scheme::Noma { bds: 0 } => write!(f, "NOMA-pure"),
            Scheme::Noma { bds } => write!(f, "NOMA+{bds}BD"),
            Scheme::Oma { bds } => write!(f, "OMA+{bds}BD"),
        }
    }
}

impl FromStr for Scheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("noma-pure") || t.eq_ignore_ascii_case("noma") {
            return Ok(Scheme::NOMA_PURE);
        }
        let bad = || ConfigError::Invalid(format!("unknown scheme '{s}'"));
        let upper = t.to_ascii_uppercase();
        let (oma, rest) = if let Some(r) = upper.strip_prefix("NOMA+") {
            (false, r)
        } else if let Some(r) = upper.strip_prefix("OMA+") {
            (true, r)
        } else {
            return Err(bad());
        };
        let bds: usize = rest.strip_suffix("BD").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(if oma { Scheme::Oma { bds } } else { Scheme::Noma { bds } })
    }
}

impl TryFrom<String> for Scheme {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> Self {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Values in dBm.
    PMax,
    /// Values in bit/s/Hz, applied to every user.
    RMin,
    /// Values in dBm, applied to users and eavesdropper alike.
    NoisePower,
    /// Values in meters: the eavesdropper visits every `(x, y)` pair inside
    /// the user disk.
    EavPosition,
    /// Variance of the eavesdropper amplitude error.
    CsiErrorVar,
}

/// Which sweep values a drop must be feasible for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityMode {
    /// Each value redraws its own infeasible drops.
    #[default]
    PerValue,
    /// A drop is kept only if it is feasible at every value, so every
    /// trial is paired across the whole sweep.
    Joint,
}

/// How an estimation error on the eavesdropper's direct amplitude is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiErrorModel {
    /// `h_e = h_hat + e` keeps its sign and enters the gain squared, so a
    /// negative draw can cancel part of the backscatter path.
    #[default]
    Signed,
    /// `h_e = max(0, h_hat + e)`.
    Clamped,
}

impl CsiErrorModel {
    pub fn realize(&self, estimate: f64, error: f64) -> f64 {
        match self {
            CsiErrorModel::Signed => estimate + error,
            CsiErrorModel::Clamped => (estimate + error).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub grid: GridConfig,
    pub pso: PsoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub feasibility: FeasibilityMode,
    /// Redraws allowed per trial before giving up.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Only read by error-variance sweeps.
    #[serde(default)]
    pub csi_model: CsiErrorModel,
}

fn default_trials() -> usize {
    1000
}

fn default_max_attempts() -> u64 {
    10_000
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, values: Vec<f64>, schemes: Vec<Scheme>, trials: usize, seed: u64) -> Self {
        Self {
            variable,
            values,
            schemes,
            trials,
            seed,
            feasibility: FeasibilityMode::default(),
            max_attempts: default_max_attempts(),
            solver: SolverSettings::default(),
            csi_model: CsiErrorModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ConfigError::Invalid("sweep needs at least one value".into()).into());
        }
        if self.trials == 0 {
            return Err(ConfigError::Invalid("sweep needs at least one trial".into()).into());
        }
        if self.schemes.is_empty() {
            return Err(ConfigError::Invalid("sweep needs at least one scheme".into()).into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::Invalid("sweep values must be finite".into()).into());
        }
        if self.variable == SweepVariable::CsiErrorVar && self.values.iter().any(|&v| v < 0.0) {
            return Err(ConfigError::Invalid("error variances must be nonnegative".into()).into());
        }
        if self.variable == SweepVariable::RMin && self.values.iter().any(|&v| v < 0.0) {
            return Err(ConfigError::Invalid("rate targets must be nonnegative".into()).into());
        }
        for s in &self.schemes {
            if let Scheme::Oma { bds: 0 } = s {
                return Err(ExperimentError::SchemeMismatch { scheme: *s, reason: "OMA baseline needs at least one BD".into() });
            }
        }
        self.solver.grid.validate()?;
        self.solver.pso.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scheme: Scheme,
    pub value: f64,
    /// Eavesdropper position for position sweeps.
    pub position: Option<Point>,
    pub mean_zeta: f64,
    pub stderr: f64,
    /// `(mean - mean_pure) / mean_pure` against plain NOMA on the same drops.
    pub rel_gain: f64,
    pub n_trials: usize,
    pub n_feasible: usize,
    pub n_resampled: u64,
    /// Per-trial ratio, zero where the scheme was infeasible.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, scheme: Scheme, value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.scheme == scheme && p.value == value)
    }

    /// Points of one scheme in sweep order.
    pub fn curve(&self, scheme: Scheme) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.scheme == scheme).collect()
    }
}

/// Solver dispatch by BD count: exact solvers for M <= 2 (grid when the
/// two-BD rule does not apply), PSO above.
pub fn solve_scheme(problem: &Problem, scheme: Scheme, settings: &SolverSettings, pso_seed: u64) -> Result<SolveResult, SolveError> {
    match scheme {
        Scheme::Oma { .. } => oma_baseline(problem),
        Scheme::Noma { bds } => {
            debug_assert_eq!(bds, problem.m());
            match bds {
                0 | 1 => solve_closed_form(problem, Objective::Ratio),
                2 if problem.k() == 2 => solve_closed_form(problem, Objective::Ratio),
                2 => feasible_or_err(problem, grid_search(problem, &settings.grid, Objective::Ratio)),
                _ => {
                    let cfg = PsoConfig { seed: pso_seed, ..settings.pso };
                    feasible_or_err(problem, pso(problem, &cfg, Objective::Ratio))
                }
            }
        }
    }
}

fn feasible_or_err(problem: &Problem, res: SolveResult) -> Result<SolveResult, SolveError> {
    if res.feasible {
        Ok(res)
    } else {
        Err(SolveError::Infeasible { p_min: problem.p_min(&ReflectionVector::ones(problem.m())), p_max: problem.p_max })
    }
}

pub fn pso_seed(seed: u64, trial: u64, bds: usize) -> u64 {
    stream_rng(seed, PSO_STREAM, trial, bds as u64).gen()
}

/// Ratio of a solved scheme, zero when infeasible.
fn zeta_of(res: &Result<SolveResult, SolveError>) -> Option<f64> {
    match res {
        Ok(r) if r.feasible => Some(r.objective.zeta),
        _ => None,
    }
}

/// OMA time-sharing rates under average power `q` with `K` equal slots.
struct OmaSlot {
    h: f64,
    h_e: f64,
    /// `1/K`.
    share: f64,
    lower: f64,
}

impl OmaSlot {
    fn rate(&self, gain: f64, q: f64) -> f64 {
        0.5 * self.share * (gain * q / self.share).ln_1p() / std::f64::consts::LN_2
    }

    fn secrecy(&self, q: f64) -> f64 {
        (self.rate(self.h, q) - self.rate(self.h_e, q)).max(0.0)
    }

    /// Maximizes `secrecy(q) - price * q` over `[lower, upper]`.
    fn best(&self, price: f64, upper: f64) -> f64 {
        if self.h <= self.h_e || upper <= self.lower {
            return self.lower;
        }
        let f = |q: f64| self.secrecy(q) - price * q;
        golden_max(f, self.lower, upper)
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 * (1.0 + b.abs()) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [a, mid, b].into_iter().fold(mid, |best, x| if f(x) > f(best) { x } else { best })
}

/// Orthogonal baseline: the users take equal time slots, each slot carrying
/// one user at average power `q_k` without interference, and every BD
/// reflects fully. Powers maximize the same ratio as NOMA, via Dinkelbach
/// outside and a budget multiplier with golden-section slots inside.
pub fn oma_baseline(problem: &Problem) -> Result<SolveResult, SolveError> {
    let (k, m) = (problem.k(), problem.m());
    if m == 0 {
        return Err(SolveError::Unsupported { solver: "oma", k, m });
    }
    let rho = ReflectionVector::ones(m);
    let h = problem.gains(&rho);
    let share = 1.0 / k as f64;
    let slots: Vec<OmaSlot> = h
        .user
        .iter()
        .zip(&problem.qos.a)
        .map(|(&hk, &a)| {
            // 1/K * 1/2 log2(1 + K H q) >= R  <=>  q >= (A^K - 1) / (K H)
            let need = a.powi(k as i32) - 1.0;
            let lower = if need > 0.0 { need * share / hk } else { 0.0 };
            OmaSlot { h: hk, h_e: h.eav, share, lower }
        })
        .collect();
    let floor: f64 = slots.iter().map(|s| s.lower).sum();
    if !(floor <= problem.p_max) {
        return Err(SolveError::Infeasible { p_min: floor, p_max: problem.p_max });
    }

    let allocate = |alpha: f64| -> Vec<f64> {
        let spend = |lambda: f64| -> Vec<f64> {
            slots.iter().map(|s| s.best(alpha + lambda, s.lower + problem.p_max - floor)).collect()
        };
        let q = spend(0.0);
        if q.iter().sum::<f64>() <= problem.p_max {
            return q;
        }
        let mut hi = 1.0;
        while spend(hi).iter().sum::<f64>() > problem.p_max {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spend(mid).iter().sum::<f64>() > problem.p_max {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        spend(hi)
    };
    let ssr = |q: &[f64]| slots.iter().zip(q).map(|(s, &x)| s.secrecy(x)).sum::<f64>();

    let mut alpha = 0.0;
    for it in 1..=crate::closedform::DINKELBACH_MAX_ITER {
        let q = allocate(alpha);
        let num = ssr(&q);
        let den = q.iter().sum::<f64>() + problem.p_circuit;
        let f = num - alpha * den;
        if f.abs() <= crate::closedform::DINKELBACH_TOL {
            return Ok(SolveResult {
                method: Method::Oma,
                rho,
                power: PowerAllocation::new(q),
                objective: ObjectiveValue { ssr: num, psi: f, zeta: num / den, alpha },
                feasible: true,
                alpha_star: Some(alpha),
                iterations: it,
                eval_count: 1,
                clamp: None,
                case: None,
            });
        }
        alpha = num / den;
    }
    Err(SolveError::NoConvergence { iterations: crate::closedform::DINKELBACH_MAX_ITER, alpha, residual: f64::NAN })
}

/// Configuration for one value of a sweep variable.
fn config_at(base: &NetworkConfig, variable: SweepVariable, value: f64, position: Option<Point>) -> NetworkConfig {
    let mut cfg = base.clone();
    match variable {
        SweepVariable::PMax => cfg.p_max = Watts(dbm_to_watts(value)),
        SweepVariable::RMin => cfg.r_min = PerUser::Uniform(value),
        SweepVariable::NoisePower => {
            cfg.noise_user = Watts(dbm_to_watts(value));
            cfg.noise_eav = cfg.noise_user;
        }
        SweepVariable::EavPosition => {
            let p = position.expect("position sweeps carry a point");
            cfg.eav_placement = EavPlacement::Fixed { x: p.x, y: p.y };
        }
        SweepVariable::CsiErrorVar => {}
    }
    cfg
}

/// Sweep points as (value, position) pairs.
fn sweep_points(spec: &SweepSpec, cfg: &NetworkConfig) -> Vec<(f64, Option<Point>)> {
    if spec.variable != SweepVariable::EavPosition {
        return spec.values.iter().map(|&v| (v, None)).collect();
    }
    let mut out = Vec::new();
    for &y in &spec.values {
        for &x in &spec.values {
            let p = Point::new(x, y);
            if p.distance(&Point::ORIGIN) <= cfg.user_radius {
                out.push((out.len() as f64, Some(p)));
            }
        }
    }
    out
}

fn baseline_feasible(s: &Scenario, cfg: &NetworkConfig) -> bool {
    match Problem::new(s, cfg) {
        Ok(p) => p_min(&p.gains(&ReflectionVector::zeros(s.m())), &p.qos) <= p.p_max,
        Err(_) => false,
    }
}

/// First attempt index whose drop satisfies `ok`.
fn first_feasible(trial: u64, max_attempts: u64, mut ok: impl FnMut(u64) -> bool) -> Result<u64, ExperimentError> {
    (0..max_attempts).find(|&a| ok(a)).ok_or(ExperimentError::NoFeasibleDrop { trial, attempts: max_attempts })
}

/// Realized ratio of a design under the eavesdropper amplitude `h_e`.
fn realized_zeta(problem: &Problem, design: &SolveResult, h_e: f64) -> f64 {
    let mut s = problem.scenario.clone();
    s.h_e = h_e;
    let realized = Problem { amps: crate::model::Amplitudes::from_scenario(&s), scenario: s, ..problem.clone() };
    let h: NormalizedGains = realized.gains(&design.rho);
    objectives(&h, &design.power, 0.0, problem.p_circuit).zeta
}

/// Runs a sweep in the current rayon pool.
pub fn run_sweep(spec: &SweepSpec, base: &NetworkConfig) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let mut base = base.clone();
    base.seed = spec.seed;
    let m_max = spec.schemes.iter().map(|s| s.bds()).max().unwrap_or(0);
    base.m = m_max;
    base.validate()?;
    let points = sweep_points(spec, &base);
    let configs: Vec<NetworkConfig> = points.iter().map(|&(v, p)| config_at(&base, spec.variable, v, p)).collect();
    let mut schemes = spec.schemes.clone();
    if !schemes.contains(&Scheme::NOMA_PURE) {
        schemes.push(Scheme::NOMA_PURE);
    }

    let trials: Vec<u64> = (0..spec.trials as u64).collect();
    let joint: Option<Vec<u64>> = match spec.feasibility {
        FeasibilityMode::PerValue => None,
        FeasibilityMode::Joint => Some(
            trials
                .par_iter()
                .map(|&t| {
                    first_feasible(t, spec.max_attempts, |a| {
                        configs.iter().all(|c| baseline_feasible(&channels_for_layout(&generate_layout(c, t, a), c), c))
                    })
                })
                .collect::<Result<_, _>>()?,
        ),
    };

    let mut out = Vec::new();
    for (&(value, position), cfg) in points.iter().zip(&configs) {
        // per trial: (attempt, zeta per scheme)
        let rows: Vec<(u64, Vec<Option<f64>>)> = trials
            .par_iter()
            .map(|&t| -> Result<_, ExperimentError> {
                let attempt = match &joint {
                    Some(a) => a[t as usize],
                    None => first_feasible(t, spec.max_attempts, |a| {
                        baseline_feasible(&channels_for_layout(&generate_layout(cfg, t, a), cfg), cfg)
                    })?,
                };
                let drop = channels_for_layout(&generate_layout(cfg, t, attempt), cfg);
                let csi_noise: f64 = stream_rng(spec.seed, CSI_STREAM, t, 0).sample(StandardNormal);
                let zetas = schemes
                    .iter()
                    .map(|&scheme| -> Result<Option<f64>, ExperimentError> {
                        let problem = Problem::new(&drop.with_bds(scheme.bds()), cfg)?;
                        let res = solve_scheme(&problem, scheme, &spec.solver, pso_seed(spec.seed, t, scheme.bds()));
                        if spec.variable == SweepVariable::CsiErrorVar {
                            let Ok(design) = res.as_ref() else { return Ok(None) };
                            let h_e = spec.csi_model.realize(problem.scenario.h_e, value.sqrt() * csi_noise);
                            return Ok(Some(realized_zeta(&problem, design, h_e)));
                        }
                        Ok(zeta_of(&res))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((attempt, zetas))
            })
            .collect::<Result<_, _>>()?;

        let n = rows.len();
        let resampled: u64 = rows.iter().map(|r| r.0).sum();
        let stats: Vec<(Vec<f64>, usize)> = (0..schemes.len())
            .map(|j| {
                let samples: Vec<f64> = rows.iter().map(|r| r.1[j].unwrap_or(0.0)).collect();
                let feasible = rows.iter().filter(|r| r.1[j].is_some()).count();
                (samples, feasible)
            })
            .collect();
        let pure_idx = schemes.iter().position(|s| *s == Scheme::NOMA_PURE).expect("baseline present");
        let pure_mean = mean(&stats[pure_idx].0);
        for (j, scheme) in spec.schemes.iter().enumerate() {
            let (samples, feasible) = &stats[j];
            let m = mean(samples);
            out.push(SweepPoint {
                scheme: *scheme,
                value,
                position,
                mean_zeta: m,
                stderr: std_error(samples),
                rel_gain: (m - pure_mean) / pure_mean,
                n_trials: n,
                n_feasible: *feasible,
                n_resampled: resampled,
                samples: samples.clone(),
            });
        }
    }
    Ok(SweepResult { variable: spec.variable, points: out })
}

/// Runs a sweep on a dedicated pool of `jobs` threads.
pub fn run_sweep_with_jobs(spec: &SweepSpec, base: &NetworkConfig, jobs: usize) -> Result<SweepResult, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(spec, base))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiPoint {
    pub k: usize,
    pub sigma_eps_sq: f64,
    pub mean_zeta: f64,
    pub stderr: f64,
    pub n_trials: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Mean realized ratio per user count and error variance. The design
/// (reflection and power) is solved on the estimated eavesdropper channel
/// and evaluated on `h_e + e` with `e ~ N(0, sigma^2)`, realized per `model`.
/// One standard normal draw per trial is scaled for every variance.
pub fn imperfect_csi_experiment(
    base: &NetworkConfig,
    sigma_eps_sq: &[f64],
    users: &[usize],
    scheme: Scheme,
    trials: usize,
    model: CsiErrorModel,
) -> Result<Vec<CsiPoint>, ExperimentError> {
    let mut out = Vec::new();
    for &k in users {
        let cfg = NetworkConfig { k, ..base.clone() };
        let mut spec = SweepSpec::new(SweepVariable::CsiErrorVar, sigma_eps_sq.to_vec(), vec![scheme], trials, base.seed);
        spec.feasibility = FeasibilityMode::Joint;
        spec.csi_model = model;
        let res = run_sweep(&spec, &cfg)?;
        for p in res.curve(scheme) {
            out.push(CsiPoint {
                k,
                sigma_eps_sq: p.value,
                mean_zeta: p.mean_zeta,
                stderr: p.stderr,
                n_trials: p.n_trials,
                samples: p.samples.clone(),
            });
        }
    }
    Ok(out)
}

/// Sweep CSV: `scheme,sweep_value,mean_zeta,stderr,rel_gain,n_feasible,n_resampled`.
pub fn write_sweep_csv<W: Write>(result: &SweepResult, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "sweep_value", "mean_zeta", "stderr", "rel_gain", "n_feasible", "n_resampled"])?;
    for p in &result.points {
        w.write_record([
            p.scheme.to_string(),
            p.value.to_string(),
            p.mean_zeta.to_string(),
            p.stderr.to_string(),
            p.rel_gain.to_string(),
            p.n_feasible.to_string(),
            p.n_resampled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Heat map of one scheme over eavesdropper positions: `x,y,mean_zeta,stderr,n_feasible`.
pub fn write_heatmap_csv<W: Write>(result: &SweepResult, scheme: Scheme, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "mean_zeta", "stderr", "n_feasible"])?;
    for p in result.curve(scheme) {
        let Some(pos) = p.position else { continue };
        w.write_record([
            pos.x.to_string(),
            pos.y.to_string(),
            p.mean_zeta.to_string(),
            p.stderr.to_string(),
            p.n_feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSolver {
    Closedform,
    Grid,
    Pso,
}

impl FromStr for DatasetSolver {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closedform" | "closed" => Ok(Self::Closedform),
            "grid" => Ok(Self::Grid),
            "pso" => Ok(Self::Pso),
            _ => Err(ConfigError::Invalid(format!("unknown solver '{s}'"))),
        }
    }
}

/// Column names of a dataset with `k` users and `m` BDs.
pub fn dataset_header(k: usize, m: usize) -> (Vec<String>, Vec<String>) {
    let mut features: Vec<String> = (1..=k).map(|i| format!("h_{i}")).collect();
    features.push("h_e".into());
    features.extend((1..=m).map(|j| format!("g_{j}")));
    for j in 1..=m {
        features.extend((1..=k).map(|i| format!("g_{j}{i}")));
    }
    features.extend((1..=m).map(|j| format!("g_{j}e")));
    let mut labels: Vec<String> = (1..=k).map(|i| format!("p_{i}")).collect();
    labels.extend((1..=m).map(|j| format!("rho_{j}")));
    labels.push("zeta".into());
    (features, labels)
}

/// One dataset row, users in SIC order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub scenario: Scenario,
    pub power: Vec<f64>,
    pub rho: Vec<f64>,
    pub zeta: f64,
}

impl DatasetRow {
    fn values(&self) -> Vec<f64> {
        let s = &self.scenario;
        let mut v = s.h.clone();
        v.push(s.h_e);
        v.extend(&s.g);
        for row in &s.g_user {
            v.extend(row);
        }
        v.extend(&s.g_eav);
        v.extend(&self.power);
        v.extend(&self.rho);
        v.push(self.zeta);
        v
    }

    /// Ratio of the stored labels on the stored channels, with the noise and
    /// circuit power of `cfg`.
    pub fn reevaluate(&self, cfg: &NetworkConfig) -> Result<f64, ExperimentError> {
        let problem = Problem::new(&self.scenario, cfg)?;
        let rho = ReflectionVector::new(self.rho.clone())?;
        let h = problem.gains(&rho);
        Ok(objectives(&h, &PowerAllocation::new(self.power.clone()), 0.0, cfg.p_circuit.0).zeta)
    }
}

fn solve_for_dataset(problem: &Problem, solver: DatasetSolver, settings: &SolverSettings, seed: u64) -> Result<SolveResult, SolveError> {
    match solver {
        DatasetSolver::Closedform => solve_closed_form(problem, Objective::Ratio),
        DatasetSolver::Grid => feasible_or_err(problem, grid_search(problem, &settings.grid, Objective::Ratio)),
        DatasetSolver::Pso => {
            let cfg = PsoConfig { seed, ..settings.pso };
            feasible_or_err(problem, pso(problem, &cfg, Objective::Ratio))
        }
    }
}

/// Solves `n_samples` feasible drops of `cfg`. Sample `i` takes the first
/// attempt of trial `i` that the solver can serve.
pub fn generate_dataset(
    cfg: &NetworkConfig,
    n_samples: usize,
    solver: DatasetSolver,
    settings: &SolverSettings,
) -> Result<Vec<DatasetRow>, ExperimentError> {
    cfg.validate()?;
    if solver == DatasetSolver::Closedform && cfg.m > 2 {
        return Err(SolveError::Unsupported { solver: "closed", k: cfg.k, m: cfg.m }.into());
    }
    const MAX_ATTEMPTS: u64 = 10_000;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|t| {
            for a in 0..MAX_ATTEMPTS {
                let s = channels_for_layout(&generate_layout(cfg, t, a), cfg);
                let problem = Problem::new(&s, cfg)?;
                match solve_for_dataset(&problem, solver, settings, pso_seed(cfg.seed, t, cfg.m)) {
                    Ok(res) => {
                        let mut sorted = problem.scenario.clone();
                        sorted.layout = None;
                        return Ok(DatasetRow {
                            scenario: sorted,
                            power: res.power.p,
                            rho: res.rho.as_slice().to_vec(),
                            zeta: res.objective.zeta,
                        });
                    }
                    Err(e) if e.is_infeasible() => continue,
                    Err(e) => return Err(e.into()),
                }
            }
            Err(ExperimentError::NoFeasibleDrop { trial: t, attempts: MAX_ATTEMPTS })
        })
        .collect()
}

pub fn write_dataset<W: Write>(rows: &[DatasetRow], k: usize, m: usize, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let (features, labels) = dataset_header(k, m);
    w.write_record(features.iter().chain(&labels))?;
    for row in rows {
        w.write_record(row.values().iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Generates and writes a dataset file.
pub fn export_dataset(
    cfg: &NetworkConfig,
    n_samples: usize,
    solver: DatasetSolver,
    settings: &SolverSettings,
    path: &Path,
) -> Result<Vec<DatasetRow>, ExperimentError> {
    let rows = generate_dataset(cfg, n_samples, solver, settings)?;
    let file = std::fs::File::create(path)?;
    write_dataset(&rows, cfg.k, cfg.m, std::io::BufWriter::new(file))?;
    Ok(rows)
}

/// Reads a dataset back. Dimensions come from the header; noise levels from
/// `cfg`.
pub fn read_dataset<R: Read>(input: R, cfg: &NetworkConfig) -> Result<Vec<DatasetRow>, ExperimentError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let k = header.iter().filter(|c| c.starts_with("p_")).count();
    let m = header.iter().filter(|c| c.starts_with("rho_")).count();
    let (features, labels) = dataset_header(k, m);
    let expected: Vec<String> = features.into_iter().chain(labels).collect();
    if header != expected {
        return Err(ExperimentError::Dataset(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|x| x.parse::<f64>().map_err(|e| ExperimentError::Dataset(format!("bad number '{x}': {e}"))))
            .collect::<Result<_, _>>()?;
        let mut it = v.into_iter();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let h = take(k);
        let h_e = take(1)[0];
        let g = take(m);
        let g_user: Vec<Vec<f64>> = (0..m).map(|_| take(k)).collect();
        let g_eav = take(m);
        let power = take(k);
        let rho = take(m);
        let zeta = take(1)[0];
        let scenario = Scenario::from_channels(h, h_e, g, g_user, g_eav, vec![cfg.noise_user.0; k], cfg.noise_eav.0)?;
        rows.push(DatasetRow { scenario, power, rho, zeta });
    }
    Ok(rows)
}
