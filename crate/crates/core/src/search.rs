//! Reflection-coefficient search for any number of BDs: a two-stage grid and
//! a particle swarm. Both score a candidate with the exact power solver.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closedform::{solve_with_reflection, Method, Objective, SolveResult};
use crate::error::ConfigError;
use crate::model::{Problem, ReflectionVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub coarse_step: f64,
    pub fine_step: f64,
    pub fine_halfwidth: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { coarse_step: 0.1, fine_step: 0.01, fine_halfwidth: 0.1 }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0 < self.fine_step && self.fine_step < self.coarse_step && self.coarse_step <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "grid steps must satisfy 0 < fine ({}) < coarse ({}) <= 1",
                self.fine_step, self.coarse_step
            )));
        }
        if !(self.fine_halfwidth >= 0.0) {
            return Err(ConfigError::Invalid("fine half-width must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of points on a lattice of the given step over [0, 1].
    fn divisions(step: f64) -> usize {
        (1.0 / step).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub n_particles: usize,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub v_max: f64,
    pub seed: u64,
    /// Graded penalty factor. `None` scores infeasible positions as -inf.
    pub penalty: Option<f64>,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            n_particles: 30,
            max_iter: 100,
            c1: 1.5,
            c2: 1.5,
            w_min: 0.4,
            w_max: 0.9,
            v_max: std::f64::consts::PI / 8.0,
            seed: 0,
            penalty: None,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_particles == 0 {
            return Err(ConfigError::Invalid("PSO needs at least one particle".into()));
        }
        if !(0.0 <= self.w_min && self.w_min <= self.w_max) {
            return Err(ConfigError::Invalid(format!("inertia bounds {} > {}", self.w_min, self.w_max)));
        }
        if !(self.v_max > 0.0) {
            return Err(ConfigError::Invalid("v_max must be positive".into()));
        }
        Ok(())
    }

    /// Quadratically decaying inertia weight.
    pub fn inertia(&self, t: usize) -> f64 {
        let frac = if self.max_iter == 0 { 1.0 } else { t as f64 / self.max_iter as f64 };
        self.w_max - (self.w_max - self.w_min) * frac * frac
    }

    pub fn evaluations(&self) -> usize {
        self.n_particles * (self.max_iter + 1)
    }
}

/// Scores a reflection vector; infeasible candidates get `None`.
fn evaluate(problem: &Problem, rho: &[f64], objective: Objective) -> Option<SolveResult> {
    let rho = ReflectionVector::new(rho.to_vec()).ok()?;
    solve_with_reflection(problem, &rho, objective).ok()
}

/// Relative amount by which a reflection vector breaks feasibility.
fn violation(problem: &Problem, rho: &[f64]) -> f64 {
    let h = problem.amps.gains(rho);
    let pm = crate::model::p_min(&h, &problem.qos);
    let mut v = (pm / problem.p_max - 1.0).max(0.0);
    for w in h.user.windows(2) {
        if w[1] > 0.0 {
            v += ((w[0] - w[1]) / w[1]).max(0.0);
        } else if w[0] > 0.0 {
            v += 1.0;
        }
    }
    v
}

struct Tracker {
    best: Option<SolveResult>,
    best_score: f64,
    evals: usize,
}

impl Tracker {
    fn new() -> Self {
        Self { best: None, best_score: f64::NEG_INFINITY, evals: 0 }
    }

    fn offer(&mut self, problem: &Problem, rho: &[f64], objective: Objective) -> Option<f64> {
        self.evals += 1;
        let res = evaluate(problem, rho, objective)?;
        let score = res.score(objective);
        if score > self.best_score {
            self.best_score = score;
            self.best = Some(res);
        }
        Some(score)
    }
}

/// Visits every point of a product lattice in lexicographic order.
fn for_each_point(axes: &[Vec<f64>], mut f: impl FnMut(&[f64])) {
    let m = axes.len();
    if axes.iter().any(|a| a.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; m];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        f(&point);
        let mut d = m;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                point[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = axes[d][0];
        }
    }
}

/// Counts of a grid run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCounts {
    pub coarse: usize,
    pub fine: usize,
}

/// Two-stage grid search over `[0, 1]^M`.
///
/// The coarse stage covers the lattice of step `coarse_step`; the fine stage
/// covers `±fine_halfwidth` around the coarse winner at `fine_step`, cut to
/// the unit cube. The first maximum found wins ties.
pub fn grid_search(problem: &Problem, cfg: &GridConfig, objective: Objective) -> SolveResult {
    grid_search_counted(problem, cfg, objective).0
}

pub fn grid_search_counted(problem: &Problem, cfg: &GridConfig, objective: Objective) -> (SolveResult, GridCounts) {
    let (k, m) = (problem.k(), problem.m());
    let mut tracker = Tracker::new();

    let nc = GridConfig::divisions(cfg.coarse_step);
    let coarse_axis: Vec<f64> = (0..=nc).map(|i| i as f64 / nc as f64).collect();
    let coarse_axes = vec![coarse_axis; m];
    for_each_point(&coarse_axes, |rho| {
        tracker.offer(problem, rho, objective);
    });
    let coarse = tracker.evals;

    let centre: Vec<f64> = match &tracker.best {
        Some(b) => b.rho.as_slice().to_vec(),
        None => {
            let res = SolveResult::infeasible(Method::Grid, k, m, coarse);
            return (res, GridCounts { coarse, fine: 0 });
        }
    };
    let nf = GridConfig::divisions(cfg.fine_step);
    let reach = (cfg.fine_halfwidth / cfg.fine_step).round() as i64;
    let fine_axes: Vec<Vec<f64>> = centre
        .iter()
        .map(|&c| {
            let ci = (c * nf as f64).round() as i64;
            let lo = (ci - reach).max(0);
            let hi = (ci + reach).min(nf as i64);
            (lo..=hi).map(|j| j as f64 / nf as f64).collect()
        })
        .collect();
    for_each_point(&fine_axes, |rho| {
        tracker.offer(problem, rho, objective);
    });
    let fine = tracker.evals - coarse;

    let counts = GridCounts { coarse, fine };
    let mut res = tracker.best.expect("coarse stage found a feasible point");
    res.method = Method::Grid;
    res.eval_count = coarse + fine;
    (res, counts)
}

/// One PSO iteration as seen by a trace observer.
#[derive(Debug)]
pub struct PsoStep<'a> {
    pub iteration: usize,
    pub best_fitness: f64,
    pub positions: &'a [Vec<f64>],
    pub velocities: &'a [Vec<f64>],
}

/// Line-delimited trace record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub best: f64,
}

impl From<&PsoStep<'_>> for TraceRecord {
    fn from(s: &PsoStep<'_>) -> Self {
        Self { iteration: s.iteration, best: s.best_fitness }
    }
}

pub fn pso(problem: &Problem, cfg: &PsoConfig, objective: Objective) -> SolveResult {
    pso_traced(problem, cfg, objective, |_| {})
}

/// Particle swarm over `[0, 1]^M`, calling `trace` after initialization and
/// after every iteration.
pub fn pso_traced(problem: &Problem, cfg: &PsoConfig, objective: Objective, trace: impl FnMut(&PsoStep)) -> SolveResult {
    let m = problem.m();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positions: Vec<Vec<f64>> =
        (0..cfg.n_particles).map(|_| (0..m).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
    let velocities: Vec<Vec<f64>> = (0..cfg.n_particles)
        .map(|_| (0..m).map(|_| rng.gen_range(-cfg.v_max..=cfg.v_max)).collect())
        .collect();
    pso_from(problem, cfg, objective, positions, velocities, rng, trace)
}

/// PSO from a given initial swarm. The generator drives the `r1`, `r2` draws.
pub fn pso_from(
    problem: &Problem,
    cfg: &PsoConfig,
    objective: Objective,
    mut pos: Vec<Vec<f64>>,
    mut vel: Vec<Vec<f64>>,
    mut rng: ChaCha8Rng,
    mut trace: impl FnMut(&PsoStep),
) -> SolveResult {
    let (k, m) = (problem.k(), problem.m());
    let mut tracker = Tracker::new();
    // clamping parks particles on faces and corners, so positions repeat
    let mut seen: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut evals = 0usize;
    let mut fitness = |tracker: &mut Tracker, rho: &[f64]| {
        evals += 1;
        let key: Vec<u64> = rho.iter().map(|x| x.to_bits()).collect();
        if let Some(&f) = seen.get(&key) {
            return f;
        }
        let f = match tracker.offer(problem, rho, objective) {
            Some(score) => score,
            None => match cfg.penalty {
                Some(s) => -s * violation(problem, rho),
                None => f64::NEG_INFINITY,
            },
        };
        seen.insert(key, f);
        f
    };

    let mut pbest = pos.clone();
    let mut pbest_fit: Vec<f64> = pos.iter().map(|p| fitness(&mut tracker, p)).collect();
    let mut g = 0;
    for i in 1..pbest_fit.len() {
        if pbest_fit[i] > pbest_fit[g] {
            g = i;
        }
    }
    let mut gbest = pbest[g].clone();
    let mut gbest_fit = pbest_fit[g];
    trace(&PsoStep { iteration: 0, best_fitness: gbest_fit, positions: &pos, velocities: &vel });

    for t in 1..=cfg.max_iter {
        let w = cfg.inertia(t);
        for i in 0..pos.len() {
            for d in 0..m {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let v = w * vel[i][d] + cfg.c1 * r1 * (pbest[i][d] - pos[i][d]) + cfg.c2 * r2 * (gbest[d] - pos[i][d]);
                vel[i][d] = v.clamp(-cfg.v_max, cfg.v_max);
                pos[i][d] = (pos[i][d] + vel[i][d]).clamp(0.0, 1.0);
            }
        }
        for i in 0..pos.len() {
            let f = fitness(&mut tracker, &pos[i]);
            if f > pbest_fit[i] {
                pbest_fit[i] = f;
                pbest[i].clone_from(&pos[i]);
            }
            if f > gbest_fit {
                gbest_fit = f;
                gbest.clone_from(&pos[i]);
            }
        }
        trace(&PsoStep { iteration: t, best_fitness: gbest_fit, positions: &pos, velocities: &vel });
    }

    match tracker.best {
        Some(mut res) => {
            res.method = Method::Pso;
            res.eval_count = evals;
            res
        }
        None => SolveResult::infeasible(Method::Pso, k, m, evals),
    }
}
