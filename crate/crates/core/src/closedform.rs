//! Exact solvers for one and two backscatter devices.
//!
//! Power allocation: with the reflection vector fixed, every user except the
//! strongest receives exactly the power its QoS target needs, expressed as a
//! cascade in the strongest user's power `p_K`. The objective then depends on
//! `p_K` alone and is concave on `[(A_K - 1)/H_K, u]`, so the optimum is the
//! derivative root clamped to that bracket. The derivative is taken by
//! central differences and the root by bisection.
//!
//! The ratio objective is handled with Dinkelbach's iteration on top of the
//! trade-off solver.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SolveError};
use crate::model::{
    objectives, p_min, secrecy_sum_rate, secrecy_term, sic_order_holds, Amplitudes, NormalizedGains,
    ObjectiveValue, PowerAllocation, Problem, QosParams, ReflectionVector,
};
use crate::search::{grid_search, GridConfig};

/// Bracket width at which the derivative bisection stops.
pub const ROOT_TOL: f64 = 1e-10;
/// Dinkelbach stops once `|F(alpha)|` falls below this.
pub const DINKELBACH_TOL: f64 = 1e-8;
pub const DINKELBACH_MAX_ITER: usize = 100;
const CONCAVITY_SAMPLES: usize = 9;

/// What the optimization maximizes once the reflection vector is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// `ssr / (theta_1 + P_c)`.
    Ratio,
    /// `ssr - alpha (theta_1 + P_c)`.
    Tradeoff { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Grid,
    Pso,
    Oma,
}

/// Which bound, if any, determines the strongest user's power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    /// The derivative root lies inside the bracket.
    Interior,
    /// The strongest user's QoS constraint is tight.
    QosFloor,
    /// The power budget is exhausted.
    BudgetCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub alloc: PowerAllocation,
    /// Interior derivative root, when there is one.
    pub p_hat: Option<f64>,
    /// `(A_K - 1) / H_K`.
    pub lower: f64,
    /// Largest `p_K` the budget allows.
    pub upper: f64,
    pub clamp: Clamp,
}

/// Powers of users `1..K-1` with their QoS constraints tight, given `p_K`.
pub fn cascade(gains: &[f64], a: &[f64], p_last: f64) -> PowerAllocation {
    let k = gains.len();
    let mut p = vec![0.0; k];
    p[k - 1] = p_last;
    let mut theta = p_last;
    for i in (0..k - 1).rev() {
        p[i] = qos_power(gains[i], a[i], theta);
        theta += p[i];
    }
    PowerAllocation::new(p)
}

#[inline]
fn qos_power(gain: f64, a: f64, theta_next: f64) -> f64 {
    if a > 1.0 {
        (a - 1.0) * (theta_next + 1.0 / gain)
    } else {
        0.0
    }
}

/// Secrecy sum-rate and total power along the cascade.
#[inline]
fn reduced(h: &NormalizedGains, a: &[f64], p_last: f64) -> (f64, f64) {
    let k = h.user.len();
    let mut theta = p_last;
    let mut ssr = secrecy_term(h.user[k - 1], h.eav, p_last, 0.0);
    for i in (0..k - 1).rev() {
        let p = qos_power(h.user[i], a[i], theta);
        ssr += secrecy_term(h.user[i], h.eav, p, theta);
        theta += p;
    }
    (ssr, theta)
}

struct Slope {
    value: f64,
    noise: f64,
}

/// Central difference at `x`; the step scales with `x` and the search
/// interval width `span`.
fn slope(h: &NormalizedGains, a: &[f64], alpha: f64, x: f64, span: f64) -> Slope {
    let step = 1e-6 * x.max(span);
    let (left, right, width) = if x - step >= 0.0 { (x - step, x + step, 2.0 * step) } else { (x, x + step, step) };
    let (s1, t1) = reduced(h, a, right);
    let (s0, t0) = reduced(h, a, left);
    let value = ((s1 - alpha * t1) - (s0 - alpha * t0)) / width;
    let scale = s1.abs() + s0.abs() + alpha * (t0 + t1) + 1.0;
    Slope { value, noise: 16.0 * f64::EPSILON * scale / width }
}

/// Optimal powers for the trade-off objective with weight `alpha`.
///
/// Needs `H_K > 0`; fails with [`SolveError::Infeasible`] when `P_max < P_min`
/// and with [`SolveError::NonConcave`] when the sampled derivative changes
/// sign more than once.
pub fn optimal_power(h: &NormalizedGains, qos: &QosParams, alpha: f64, p_max: f64) -> Result<PowerSolution, SolveError> {
    let k = h.user.len();
    let a = &qos.a;
    let pm = p_min(h, qos);
    if !(pm <= p_max) {
        return Err(SolveError::Infeasible { p_min: pm, p_max });
    }
    let prefix: f64 = a[..k - 1].iter().product();
    let lower = if a[k - 1] > 1.0 { (a[k - 1] - 1.0) / h.user[k - 1] } else { 0.0 };
    let upper = lower + (p_max - pm) / prefix;
    let finish = |p_last: f64, clamp: Clamp, p_hat: Option<f64>| PowerSolution {
        alloc: cascade(&h.user, a, p_last),
        p_hat,
        lower,
        upper,
        clamp,
    };
    if upper <= lower {
        return Ok(finish(lower, Clamp::QosFloor, None));
    }

    let samples: Vec<Slope> = (0..CONCAVITY_SAMPLES)
        .map(|i| slope(h, a, alpha, lower + (upper - lower) * i as f64 / (CONCAVITY_SAMPLES - 1) as f64, upper - lower))
        .collect();
    let mut seen_negative = false;
    let mut any_signal = false;
    for s in &samples {
        if s.value > s.noise {
            any_signal = true;
            if seen_negative {
                return Err(SolveError::NonConcave { lo: lower, hi: upper });
            }
        } else if s.value < -s.noise {
            any_signal = true;
            seen_negative = true;
        }
    }
    if !any_signal {
        // flat objective: spend the least power
        return Ok(finish(lower, Clamp::QosFloor, None));
    }
    if samples[0].value <= 0.0 {
        return Ok(finish(lower, Clamp::QosFloor, None));
    }
    if samples[CONCAVITY_SAMPLES - 1].value >= 0.0 {
        return Ok(finish(upper, Clamp::BudgetCap, None));
    }
    // the sign change sits between two neighbouring samples
    let step = (upper - lower) / (CONCAVITY_SAMPLES - 1) as f64;
    let first_down = samples.iter().position(|s| s.value <= 0.0).expect("last sample is negative");
    let mut lo = lower + step * (first_down - 1) as f64;
    let mut hi = if first_down == CONCAVITY_SAMPLES - 1 { upper } else { lower + step * first_down as f64 };
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(h, a, alpha, mid, upper - lower).value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    Ok(finish(root, Clamp::Interior, Some(root)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachOutcome {
    pub power: PowerSolution,
    pub objective: ObjectiveValue,
    /// Final weight; equals the achieved ratio up to `F / (theta_1 + P_c)`.
    pub alpha_star: f64,
    /// `F(alpha_star)`.
    pub residual: f64,
    pub iterations: usize,
}

/// Maximizes `ssr / (theta_1 + P_c)` over the power allocation for fixed gains.
pub fn dinkelbach(h: &NormalizedGains, qos: &QosParams, p_max: f64, p_circuit: f64) -> Result<DinkelbachOutcome, SolveError> {
    let mut alpha = 0.0;
    let mut last = (alpha, f64::NAN);
    for it in 1..=DINKELBACH_MAX_ITER {
        let sol = optimal_power(h, qos, alpha, p_max)?;
        let ssr = secrecy_sum_rate(h, &sol.alloc);
        let consumed = sol.alloc.total() + p_circuit;
        let f = ssr - alpha * consumed;
        if f.abs() <= DINKELBACH_TOL {
            let objective = objectives(h, &sol.alloc, alpha, p_circuit);
            return Ok(DinkelbachOutcome { power: sol, objective, alpha_star: alpha, residual: f, iterations: it });
        }
        last = (alpha, f);
        alpha = ssr / consumed;
    }
    Err(SolveError::NoConvergence { iterations: DINKELBACH_MAX_ITER, alpha: last.0, residual: last.1 })
}

/// Outcome of a solver for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub method: Method,
    pub rho: ReflectionVector,
    pub power: PowerAllocation,
    pub objective: ObjectiveValue,
    pub feasible: bool,
    /// Final Dinkelbach weight in ratio mode.
    pub alpha_star: Option<f64>,
    /// Dinkelbach iterations of the returned point.
    pub iterations: usize,
    /// Objective evaluations performed (search points for grid/PSO).
    pub eval_count: usize,
    pub clamp: Option<Clamp>,
    pub case: Option<TwoBdCase>,
}

impl SolveResult {
    pub fn infeasible(method: Method, k: usize, m: usize, eval_count: usize) -> Self {
        Self {
            method,
            rho: ReflectionVector::zeros(m),
            power: PowerAllocation::new(vec![0.0; k]),
            objective: ObjectiveValue { ssr: 0.0, psi: f64::NEG_INFINITY, zeta: 0.0, alpha: 0.0 },
            feasible: false,
            alpha_star: None,
            iterations: 0,
            eval_count,
            clamp: None,
            case: None,
        }
    }

    /// The value the search methods compare: zeta for ratio, psi for trade-off.
    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Ratio => self.objective.zeta,
            Objective::Tradeoff { .. } => self.objective.psi,
        }
    }
}

/// Optimal power for a fixed reflection vector.
///
/// Fails with [`SolveError::Infeasible`] when the QoS targets exceed the
/// budget or the effective gains break the SIC order.
pub fn solve_with_reflection(problem: &Problem, rho: &ReflectionVector, objective: Objective) -> Result<SolveResult, SolveError> {
    let h = problem.gains(rho);
    if !sic_order_holds(&h) {
        return Err(SolveError::Infeasible { p_min: f64::INFINITY, p_max: problem.p_max });
    }
    let (power, objective_value, alpha_star, iterations) = match objective {
        Objective::Ratio => {
            let d = dinkelbach(&h, &problem.qos, problem.p_max, problem.p_circuit)?;
            (d.power, d.objective, Some(d.alpha_star), d.iterations)
        }
        Objective::Tradeoff { alpha } => {
            let sol = optimal_power(&h, &problem.qos, alpha, problem.p_max)?;
            let v = objectives(&h, &sol.alloc, alpha, problem.p_circuit);
            (sol, v, None, 1)
        }
    };
    Ok(SolveResult {
        method: Method::ClosedForm,
        rho: rho.clone(),
        power: power.alloc,
        objective: objective_value,
        feasible: true,
        alpha_star,
        iterations,
        eval_count: 1,
        clamp: Some(power.clamp),
        case: None,
    })
}

/// Ratio maximization at a fixed reflection vector.
pub fn dinkelbach_ratio(problem: &Problem, rho: &ReflectionVector) -> Result<SolveResult, SolveError> {
    solve_with_reflection(problem, rho, Objective::Ratio)
}

/// Single-BD reflection coefficient: full reflection when the backscatter
/// path strengthens every user more than the one below it in SIC order.
/// Depends on channels only, never on the power allocation.
pub fn optimal_rho_single(amps: &Amplitudes) -> f64 {
    assert_eq!(amps.m(), 1, "single-BD rule needs exactly one device");
    let via = &amps.user_via[0];
    if via.windows(2).all(|w| w[1] > w[0]) {
        1.0
    } else {
        0.0
    }
}

/// Noise-normalized amplitudes of the two-user, two-BD system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoBdGeometry {
    pub g1: f64,
    pub g2: f64,
    pub ge: f64,
    pub g11: f64,
    pub g12: f64,
    pub g1e: f64,
    pub g21: f64,
    pub g22: f64,
    pub g2e: f64,
}

/// Where the SIC boundary `sqrt(rho1) d1 + sqrt(rho2) d2 = G2 - G1` meets
/// the edges of the unit square. `None` when the matching difference is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoints {
    /// `rho1` on the boundary at `rho2 = 0`.
    pub rho1_inf: Option<f64>,
    /// `rho1` on the boundary at `rho2 = 1`.
    pub rho1_sup: Option<f64>,
    pub rho2_inf: Option<f64>,
    pub rho2_sup: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    H1,
    H21,
    H221,
    H222,
    H31,
    H321,
    H322,
    H4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoBdCase {
    /// BD 1 carries the reflection.
    Primary(Branch),
    /// Mirror image: BD 2 carries the reflection.
    Swapped(Branch),
    /// An excluded ratio equality holds; solved by grid search instead.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoBdDecision {
    /// `None` when degenerate.
    pub rho: Option<[f64; 2]>,
    pub case: TwoBdCase,
}

impl TwoBdGeometry {
    /// Reads the geometry of a K = 2, M = 2 problem (users in SIC order).
    pub fn from_amplitudes(a: &Amplitudes) -> Result<Self, ConfigError> {
        if a.k() != 2 || a.m() != 2 {
            return Err(ConfigError::Dimension(format!(
                "two-BD geometry needs K = 2, M = 2, got K = {}, M = {}",
                a.k(),
                a.m()
            )));
        }
        Ok(Self {
            g1: a.user_direct[0],
            g2: a.user_direct[1],
            ge: a.eav_direct,
            g11: a.user_via[0][0],
            g12: a.user_via[0][1],
            g1e: a.eav_via[0],
            g21: a.user_via[1][0],
            g22: a.user_via[1][1],
            g2e: a.eav_via[1],
        })
    }

    fn mirrored(&self) -> Self {
        Self { g11: self.g21, g12: self.g22, g1e: self.g2e, g21: self.g11, g22: self.g12, g2e: self.g1e, ..*self }
    }

    pub fn boundary_points(&self) -> BoundaryPoints {
        let gap = self.g2 - self.g1;
        let d1 = self.g11 - self.g12;
        let d2 = self.g21 - self.g22;
        let sq = |num: f64, den: f64| (den != 0.0).then(|| (num / den).powi(2));
        BoundaryPoints {
            rho1_inf: sq(gap, d1),
            rho1_sup: sq(gap - d2, d1),
            rho2_inf: sq(gap, d2),
            rho2_sup: sq(gap - d1, d2),
        }
    }
}

/// `a/b == c/d` up to rounding, for positive operands.
fn ratio_tie(a: f64, b: f64, c: f64, d: f64) -> bool {
    let (l, r) = (a * d, c * b);
    (l - r).abs() <= 1e-12 * l.abs().max(r.abs())
}

/// Branch analysis for the case where BD 1 helps user 2 against the
/// eavesdropper more than BD 2 does. Returns `(rho on BD 1, branch)`.
fn primary_branch(g: &TwoBdGeometry) -> (f64, Branch) {
    let d1 = g.g11 - g.g12;
    let d2 = g.g21 - g.g22;
    let b = g.boundary_points();
    let inf1 = b.rho1_inf.unwrap_or(f64::INFINITY);
    match (d1 > 0.0, d2 > 0.0) {
        (false, false) => (1.0, Branch::H1),
        (true, false) => {
            let branch = if inf1 > 1.0 {
                Branch::H21
            } else if b.rho1_sup.unwrap_or(f64::INFINITY) > 1.0 {
                Branch::H221
            } else {
                Branch::H222
            };
            (inf1.min(1.0), branch)
        }
        (false, true) => {
            let inf2 = b.rho2_inf.unwrap_or(f64::INFINITY);
            let branch = if inf2 > 1.0 {
                Branch::H31
            } else if b.rho2_sup.unwrap_or(f64::INFINITY) > 1.0 {
                Branch::H321
            } else {
                Branch::H322
            };
            (1.0, branch)
        }
        (true, true) => (inf1.min(1.0), Branch::H4),
    }
}

/// Optimal reflection pair for two users and two BDs.
pub fn optimal_rho_two_bd(g: &TwoBdGeometry) -> TwoBdDecision {
    let degenerate = ratio_tie(g.g12, g.g1e, g.g22, g.g2e)
        || ratio_tie(g.g22, g.g2e, g.g2, g.ge)
        || ratio_tie(g.g12, g.g1e, g.g2, g.ge);
    if degenerate {
        return TwoBdDecision { rho: None, case: TwoBdCase::Degenerate };
    }
    if g.g12 * g.g2e > g.g22 * g.g1e {
        let (r, branch) = primary_branch(g);
        TwoBdDecision { rho: Some([r, 0.0]), case: TwoBdCase::Primary(branch) }
    } else {
        let (r, branch) = primary_branch(&g.mirrored());
        TwoBdDecision { rho: Some([0.0, r]), case: TwoBdCase::Swapped(branch) }
    }
}

/// Closed-form pipeline: reflection from the single- or two-BD rule, then
/// the optimal power. M = 0 is plain NOMA. Degenerate two-BD geometries and
/// M = 2 with K != 2 fall back to grid search.
pub fn solve_closed_form(problem: &Problem, objective: Objective) -> Result<SolveResult, SolveError> {
    let (k, m) = (problem.k(), problem.m());
    match m {
        0 => solve_with_reflection(problem, &ReflectionVector::zeros(0), objective),
        1 => {
            let rho = ReflectionVector::ones(1);
            let rho = if optimal_rho_single(&problem.amps) == 1.0 { rho } else { ReflectionVector::zeros(1) };
            solve_with_reflection(problem, &rho, objective)
        }
        2 => {
            let decision = TwoBdGeometry::from_amplitudes(&problem.amps).map(|g| optimal_rho_two_bd(&g));
            match decision {
                Ok(TwoBdDecision { rho: Some(r), case }) => {
                    let rho = ReflectionVector::new(r.to_vec())?;
                    let mut res = solve_with_reflection(problem, &rho, objective)?;
                    res.case = Some(case);
                    Ok(res)
                }
                Ok(TwoBdDecision { rho: None, case }) => {
                    let mut res = grid_search(problem, &GridConfig::default(), objective);
                    res.case = Some(case);
                    if res.feasible {
                        Ok(res)
                    } else {
                        Err(SolveError::Infeasible { p_min: problem.p_min(&ReflectionVector::ones(2)), p_max: problem.p_max })
                    }
                }
                Err(_) => {
                    let res = grid_search(problem, &GridConfig::default(), objective);
                    if res.feasible {
                        Ok(res)
                    } else {
                        Err(SolveError::Infeasible { p_min: problem.p_min(&ReflectionVector::ones(2)), p_max: problem.p_max })
                    }
                }
            }
        }
        _ => Err(SolveError::Unsupported { solver: "closed", k, m }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_constraints, QosParams};
    use crate::scenario::{generate_scenario, NetworkConfig, Scenario};

    fn gains(user: Vec<f64>, eav: f64) -> NormalizedGains {
        NormalizedGains { user, eav, bds: 0 }
    }

    /// Explicit product-sum form of the QoS cascade, written independently of
    /// the recursive implementation.
    fn cascade_explicit(h: &[f64], a: &[f64], p_last: f64) -> Vec<f64> {
        let k = h.len();
        let mut p = vec![0.0; k];
        p[k - 1] = p_last;
        for i in 0..k - 1 {
            let prod_all: f64 = a[i + 1..k - 1].iter().product();
            let mut inner = 1.0 / h[i] + p_last * prod_all;
            for j in i + 1..k - 1 {
                let prod: f64 = a[i + 1..j].iter().product();
                inner += (a[j] - 1.0) / h[j] * prod;
            }
            p[i] = (a[i] - 1.0) * inner;
        }
        p
    }

    fn random_problem(cfg: &NetworkConfig, trial: u64) -> Problem {
        let s = generate_scenario(cfg, trial).unwrap();
        Problem::new(&s, cfg).unwrap()
    }

    #[test]
    fn cascade_matches_explicit_formula() {
        let h = [2.0, 5.0, 7.0, 30.0];
        let a = [4.0, 2.0, 3.0, 4.0];
        let p = cascade(&h, &a, 1.7);
        let q = cascade_explicit(&h, &a, 1.7);
        for (x, y) in p.p.iter().zip(&q) {
            assert!((x - y).abs() <= 1e-13 * y.abs());
        }
    }

    #[test]
    fn cascade_meets_lower_qos_with_equality() {
        let h = gains(vec![2.0, 5.0, 30.0], 1.0);
        let qos = QosParams::from_rates(&[1.0, 0.5, 1.5]);
        let p = cascade(&h.user, &qos.a, 3.0);
        for k in 0..2 {
            let need = qos.a[k] * p.theta(k + 1) + (qos.a[k] - 1.0) / h.user[k];
            assert!((need - p.theta(k)).abs() < 1e-12 * need);
        }
    }

    #[test]
    fn large_alpha_sits_on_qos_floor() {
        let h = gains(vec![10.0, 1000.0], 50.0);
        let qos = QosParams::from_rates(&[1.0, 1.0]);
        let sol = optimal_power(&h, &qos, 1e6, 100.0).unwrap();
        assert_eq!(sol.clamp, Clamp::QosFloor);
        assert_eq!(sol.alloc.p[1], 3.0 / 1000.0);
        let rep = check_constraints(&h, &sol.alloc, &qos, 100.0);
        assert!(rep.all_hold());
        for k in 0..2 {
            let need = qos.a[k] * sol.alloc.theta(k + 1) + (qos.a[k] - 1.0) / h.user[k];
            assert!((need - sol.alloc.theta(k)).abs() < 1e-12 * need);
        }
    }

    #[test]
    fn zero_alpha_exhausts_budget() {
        let h = gains(vec![10.0, 1000.0], 50.0);
        let qos = QosParams::from_rates(&[1.0, 1.0]);
        let sol = optimal_power(&h, &qos, 0.0, 100.0).unwrap();
        assert_eq!(sol.clamp, Clamp::BudgetCap);
        assert!((sol.alloc.total() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_budget_reported() {
        let h = gains(vec![0.01, 0.02], 0.0);
        let qos = QosParams::from_rates(&[1.0, 1.0]);
        let err = optimal_power(&h, &qos, 0.1, 100.0).unwrap_err();
        assert!(err.is_infeasible());
    }

    /// The returned p_K beats a fine sweep of the reduced objective.
    #[test]
    fn optimal_power_matches_sweep_k3() {
        let cfg = NetworkConfig { k: 3, m: 1, seed: 5, ..Default::default() };
        let mut checked = 0;
        for t in 0..40 {
            let pr = random_problem(&cfg, t);
            let h = pr.gains(&ReflectionVector::ones(1));
            if !sic_order_holds(&h) || p_min(&h, &pr.qos) > pr.p_max {
                continue;
            }
            for alpha in [0.01, 0.05, 0.3] {
                let sol = optimal_power(&h, &pr.qos, alpha, pr.p_max).unwrap();
                let psi = |x: f64| objectives(&h, &cascade(&h.user, &pr.qos.a, x), alpha, pr.p_circuit).psi;
                let best = psi(sol.alloc.p[2]);
                let n = 10_000;
                let sweep = (0..=n)
                    .map(|i| psi(sol.lower + (sol.upper - sol.lower) * i as f64 / n as f64))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(best >= sweep - 1e-6 * sweep.abs().max(1e-12), "trial {t}: {best} < {sweep}");
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn clamp_trichotomy_and_perturbation() {
        let cfg = NetworkConfig { k: 3, m: 1, seed: 9, ..Default::default() };
        for t in 0..60 {
            let pr = random_problem(&cfg, t);
            let h = pr.gains(&ReflectionVector::zeros(1));
            for alpha in [0.0, 0.02, 0.2, 5.0] {
                let Ok(sol) = optimal_power(&h, &pr.qos, alpha, pr.p_max) else { continue };
                let pk = sol.alloc.p[2];
                let explicit = cascade_explicit(&h.user, &pr.qos.a, pk);
                for (x, y) in sol.alloc.p.iter().zip(&explicit) {
                    assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300));
                }
                match sol.clamp {
                    Clamp::Interior => {
                        let r = sol.p_hat.unwrap();
                        assert!(r > sol.lower && r < sol.upper);
                    }
                    Clamp::QosFloor => assert_eq!(pk, sol.lower),
                    Clamp::BudgetCap => assert!((sol.alloc.total() - pr.p_max).abs() <= 1e-9 * pr.p_max),
                }
                let psi = |x: f64| objectives(&h, &cascade(&h.user, &pr.qos.a, x), alpha, pr.p_circuit).psi;
                let here = psi(pk);
                for d in [-1e-5, 1e-5] {
                    let x = pk + d;
                    if x >= sol.lower && x <= sol.upper {
                        assert!(psi(x) <= here + 1e-9, "trial {t} alpha {alpha}");
                    }
                }
            }
        }
    }

    #[test]
    fn dinkelbach_fixed_point() {
        let cfg = NetworkConfig { k: 2, m: 1, seed: 21, ..Default::default() };
        for t in 0..50 {
            let pr = random_problem(&cfg, t);
            let rho = ReflectionVector::new(vec![optimal_rho_single(&pr.amps)]).unwrap();
            let h = pr.gains(&rho);
            let d = dinkelbach(&h, &pr.qos, pr.p_max, pr.p_circuit).unwrap();
            assert!(d.residual.abs() <= DINKELBACH_TOL);
            assert!((d.alpha_star - d.objective.zeta).abs() <= 1e-8);
            // F(0) is the best secrecy sum-rate and is never negative
            let s0 = optimal_power(&h, &pr.qos, 0.0, pr.p_max).unwrap();
            assert!(secrecy_sum_rate(&h, &s0.alloc) >= 0.0);
        }
    }

    /// F(alpha) = max_p [ssr - alpha (theta_1 + P_c)] decreases in alpha.
    #[test]
    fn parametric_value_decreasing() {
        let cfg = NetworkConfig { k: 2, m: 1, seed: 4, ..Default::default() };
        for t in 0..20 {
            let pr = random_problem(&cfg, t);
            let h = pr.gains(&ReflectionVector::ones(1));
            if !sic_order_holds(&h) {
                continue;
            }
            let f = |alpha: f64| {
                let s = optimal_power(&h, &pr.qos, alpha, pr.p_max).unwrap();
                objectives(&h, &s.alloc, alpha, pr.p_circuit).psi
            };
            let d = dinkelbach(&h, &pr.qos, pr.p_max, pr.p_circuit).unwrap();
            let grid: Vec<f64> = (0..8).map(|i| d.alpha_star * i as f64 / 4.0).collect();
            for w in grid.windows(2) {
                if w[1] > w[0] {
                    assert!(f(w[1]) < f(w[0]));
                }
            }
        }
    }

    /// The ratio found by Dinkelbach matches a direct scan of ssr / power
    /// along the cascade.
    #[test]
    fn dinkelbach_matches_direct_ratio_scan() {
        let cfg = NetworkConfig { k: 2, m: 1, seed: 77, ..Default::default() };
        for t in 0..100 {
            let pr = random_problem(&cfg, t);
            let rho = ReflectionVector::new(vec![optimal_rho_single(&pr.amps)]).unwrap();
            let h = pr.gains(&rho);
            let d = dinkelbach(&h, &pr.qos, pr.p_max, pr.p_circuit).unwrap();
            let lo = d.power.lower;
            let hi = d.power.upper;
            let n = 10_000;
            let mut best = 0.0f64;
            let mut best_x = lo;
            for i in 0..=n {
                let x = lo + (hi - lo) * i as f64 / n as f64;
                let z = objectives(&h, &cascade(&h.user, &pr.qos.a, x), 0.0, pr.p_circuit).zeta;
                if z > best {
                    best = z;
                    best_x = x;
                }
            }
            // refine the scan around its best cell
            let cell = (hi - lo) / n as f64;
            for i in 0..=2000 {
                let x = (best_x - cell + cell * i as f64 / 1000.0).clamp(lo, hi);
                best = best.max(objectives(&h, &cascade(&h.user, &pr.qos.a, x), 0.0, pr.p_circuit).zeta);
            }
            let z = d.objective.zeta;
            assert!((z - best).abs() <= 1e-5 * best.max(1e-12), "trial {t}: {z} vs {best}");
        }
    }

    #[test]
    fn single_bd_rule_examples() {
        let mk = |g1: f64, g2: f64| {
            let s = Scenario::from_channels(
                vec![0.1, 0.2],
                0.15,
                vec![1.0],
                vec![vec![g1, g2]],
                vec![0.05],
                vec![1.0, 1.0],
                1.0,
            )
            .unwrap();
            Problem::with_params(&s, &[1.0, 1.0], 100.0, 1.0).unwrap()
        };
        assert_eq!(optimal_rho_single(&mk(0.1, 0.3).amps), 1.0);
        assert_eq!(optimal_rho_single(&mk(0.3, 0.1).amps), 0.0);
    }

    fn geom(g1: f64, g2: f64, d1: f64, d2: f64) -> TwoBdGeometry {
        // g12/g1e = 2 > g22/g2e = 1, and both differ from g2/ge
        TwoBdGeometry { g1, g2, ge: 1.7, g11: 2.0 + d1, g12: 2.0, g1e: 1.0, g21: 1.0 + d2, g22: 1.0, g2e: 1.0 }
    }

    #[test]
    fn boundary_point_examples() {
        let b = geom(1.0, 1.0, 0.5, 0.25).boundary_points();
        assert_eq!(b.rho1_inf, Some(0.0));
        assert_eq!(b.rho2_inf, Some(0.0));
        let b = geom(1.0, 3.0, 1.0, 0.5).boundary_points();
        assert_eq!(b.rho1_inf, Some(4.0));
        assert_eq!(b.rho1_sup, Some(((2.0f64 - 0.5) / 1.0).powi(2)));
        assert_eq!(geom(1.0, 3.0, 0.0, 0.5).boundary_points().rho1_inf, None);

        let g = geom(1.0, 3.0, 3.0, 5.0);
        let b = g.boundary_points();
        let gap = g.g2 - g.g1;
        let (d1, d2) = (g.g11 - g.g12, g.g21 - g.g22);
        let corners = [
            (b.rho1_inf.unwrap(), 0.0),
            (b.rho1_sup.unwrap(), 1.0),
            (0.0, b.rho2_inf.unwrap()),
            (1.0, b.rho2_sup.unwrap()),
        ];
        for (r1, r2) in corners {
            let signed1 = if d1 * (gap - r2.sqrt() * d2) >= 0.0 { r1.sqrt() } else { -r1.sqrt() };
            let signed2 = if d2 * (gap - r1.sqrt() * d1) >= 0.0 { r2.sqrt() } else { -r2.sqrt() };
            let lhs = if r2 == 0.0 || r2 == 1.0 { signed1 * d1 + r2.sqrt() * d2 } else { r1.sqrt() * d1 + signed2 * d2 };
            assert!((lhs - gap).abs() < 1e-12, "{lhs} vs {gap}");
        }
    }

    #[test]
    fn two_bd_branches() {
        let d = optimal_rho_two_bd(&geom(1.0, 2.0, -0.5, -0.5));
        assert_eq!(d.rho, Some([1.0, 0.0]));
        assert_eq!(d.case, TwoBdCase::Primary(Branch::H1));

        // G2 - G1 = 1, G11 - G12 = 2 -> rho1_inf = 0.25
        let d = optimal_rho_two_bd(&geom(1.0, 2.0, 2.0, -0.5));
        assert_eq!(d.rho, Some([0.25, 0.0]));
        assert!(matches!(d.case, TwoBdCase::Primary(Branch::H221 | Branch::H222)));

        let d = optimal_rho_two_bd(&geom(1.0, 2.0, 0.5, -0.5));
        assert_eq!(d.rho, Some([1.0, 0.0]));
        assert_eq!(d.case, TwoBdCase::Primary(Branch::H21));

        let d = optimal_rho_two_bd(&geom(1.0, 2.0, -0.5, 0.5));
        assert_eq!(d.rho, Some([1.0, 0.0]));
        assert!(matches!(d.case, TwoBdCase::Primary(Branch::H31 | Branch::H321 | Branch::H322)));

        let d = optimal_rho_two_bd(&geom(1.0, 2.0, 4.0, 4.0));
        assert_eq!(d.rho, Some([1.0 / 16.0, 0.0]));
        assert_eq!(d.case, TwoBdCase::Primary(Branch::H4));
    }

    #[test]
    fn two_bd_mirror_and_degenerate() {
        let mut g = geom(1.0, 2.0, 2.0, -0.5);
        std::mem::swap(&mut g.g11, &mut g.g21);
        std::mem::swap(&mut g.g12, &mut g.g22);
        std::mem::swap(&mut g.g1e, &mut g.g2e);
        let d = optimal_rho_two_bd(&g);
        assert_eq!(d.rho, Some([0.0, 0.25]));
        assert!(matches!(d.case, TwoBdCase::Swapped(_)));

        let mut g = geom(1.0, 2.0, 2.0, -0.5);
        g.g22 = 2.0;
        g.g2e = 1.0;
        assert_eq!(optimal_rho_two_bd(&g).case, TwoBdCase::Degenerate);
        let mut g = geom(1.0, 2.0, 2.0, -0.5);
        g.ge = 1.0; // g2/ge = 2 = g12/g1e
        assert_eq!(optimal_rho_two_bd(&g).case, TwoBdCase::Degenerate);
    }

    #[test]
    fn closed_form_handles_bd_counts() {
        for m in 0..=2 {
            let cfg = NetworkConfig { k: 2, m, seed: 3, ..Default::default() };
            let pr = random_problem(&cfg, 0);
            let res = solve_closed_form(&pr, Objective::Ratio).unwrap();
            assert_eq!(res.rho.len(), m);
            assert!(res.feasible);
            let h = pr.gains(&res.rho);
            assert!(check_constraints(&h, &res.power, &pr.qos, pr.p_max).all_hold());
        }
        let cfg = NetworkConfig { k: 2, m: 3, ..Default::default() };
        let err = solve_closed_form(&random_problem(&cfg, 0), Objective::Ratio).unwrap_err();
        assert!(matches!(err, SolveError::Unsupported { .. }));
    }
}
