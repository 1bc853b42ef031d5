//! Effective channels, SINR, rates, secrecy rates and the two
//! secrecy-energy-efficiency objectives, plus the constraint checks.
//!
//! Conventions: users are indexed 0..K in SIC order (weakest direct channel
//! first), gains are normalized by the receiver noise, powers are in watts
//! and rates in bits/s/Hz with the 1/2 prefactor of a real-valued channel.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SolveError};
use crate::scenario::{order_users, NetworkConfig, Scenario, UserOrder};

/// Relative slack applied to every constraint inequality.
pub const CONSTRAINT_RTOL: f64 = 1e-9;

/// Backscatter reflection coefficients, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReflectionVector(Vec<f64>);

impl ReflectionVector {
    pub fn new(rho: Vec<f64>) -> Result<Self, ConfigError> {
        if let Some(bad) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(ConfigError::Invalid(format!("reflection coefficient {bad} outside [0, 1]")));
        }
        Ok(Self(rho))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn ones(m: usize) -> Self {
        Self(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ReflectionVector {
    type Error = ConfigError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ReflectionVector> for Vec<f64> {
    fn from(r: ReflectionVector) -> Self {
        r.0
    }
}

/// `A_k = 2^(2 R_min,k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosParams {
    pub a: Vec<f64>,
}

impl QosParams {
    pub fn from_rates(r_min: &[f64]) -> Self {
        Self { a: r_min.iter().map(|r| (2.0 * r).exp2()).collect() }
    }
}

/// Per-user transmit powers in SIC order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(p: Vec<f64>) -> Self {
        Self { p }
    }

    /// Tail sum `theta_i = p_i + ... + p_{K-1}` (0-based); `theta(K) = 0`.
    pub fn theta(&self, i: usize) -> f64 {
        self.p[i.min(self.p.len())..].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.theta(0)
    }
}

/// Noise-normalized effective gains `H` for every user and the eavesdropper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedGains {
    pub user: Vec<f64>,
    pub eav: f64,
    /// Number of backscatter devices the gains were formed with.
    pub bds: usize,
}

/// Noise-normalized amplitudes: `G_k = h_k / sigma_k` and
/// `G_mk = g_m g_mk / sigma_k` (BD index first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amplitudes {
    pub user_direct: Vec<f64>,
    pub eav_direct: f64,
    pub user_via: Vec<Vec<f64>>,
    pub eav_via: Vec<f64>,
}

impl Amplitudes {
    pub fn from_scenario(s: &Scenario) -> Self {
        let su: Vec<f64> = s.noise_user.iter().map(|n| n.sqrt()).collect();
        let se = s.noise_eav.sqrt();
        Self {
            user_direct: s.h.iter().zip(&su).map(|(h, s)| h / s).collect(),
            eav_direct: s.h_e / se,
            user_via: s
                .g
                .iter()
                .zip(&s.g_user)
                .map(|(g, row)| row.iter().zip(&su).map(|(gk, s)| g * gk / s).collect())
                .collect(),
            eav_via: s.g.iter().zip(&s.g_eav).map(|(g, ge)| g * ge / se).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.user_direct.len()
    }

    pub fn m(&self) -> usize {
        self.eav_via.len()
    }

    /// `H = (G + sum_m sqrt(rho_m) G_m)^2` per node. `rho.len()` must be `M`.
    pub fn gains(&self, rho: &[f64]) -> NormalizedGains {
        debug_assert_eq!(rho.len(), self.m());
        let sq: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
        let user = (0..self.k())
            .map(|k| {
                let a = self.user_direct[k]
                    + sq.iter().zip(&self.user_via).map(|(s, row)| s * row[k]).sum::<f64>();
                a * a
            })
            .collect();
        let e = self.eav_direct + sq.iter().zip(&self.eav_via).map(|(s, g)| s * g).sum::<f64>();
        NormalizedGains { user, eav: e * e, bds: self.m() }
    }
}

/// Effective normalized gains of a scenario under reflection vector `rho`.
pub fn effective_gains(s: &Scenario, rho: &ReflectionVector) -> Result<NormalizedGains, ConfigError> {
    s.check_dims()?;
    if rho.len() != s.m() {
        return Err(ConfigError::Dimension(format!(
            "{} reflection coefficients for {} devices",
            rho.len(),
            s.m()
        )));
    }
    Ok(Amplitudes::from_scenario(s).gains(rho.as_slice()))
}

/// SINR of user `k`'s message at a receiver with gain `gain_i`.
pub fn sinr(gain_i: f64, p: &PowerAllocation, k: usize) -> f64 {
    sinr_raw(gain_i, p.p[k], p.theta(k + 1))
}

#[inline]
pub(crate) fn sinr_raw(gain: f64, p_k: f64, theta_next: f64) -> f64 {
    gain * p_k / (gain * theta_next + 1.0)
}

#[inline]
fn half_log2_1p(x: f64) -> f64 {
    0.5 * x.ln_1p() / std::f64::consts::LN_2
}

/// `[R_k - R_k^e]^+` for one message given its power and the tail power above it.
#[inline]
pub(crate) fn secrecy_term(h_user: f64, h_eav: f64, p_k: f64, theta_next: f64) -> f64 {
    let g = sinr_raw(h_user, p_k, theta_next);
    let ge = sinr_raw(h_eav, p_k, theta_next);
    if g <= ge {
        return 0.0;
    }
    // log(1 + g) - log(1 + ge) with a single logarithm
    half_log2_1p((g - ge) / (1.0 + ge))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserRates {
    pub rate: f64,
    pub eav_rate: f64,
    pub secrecy: f64,
}

pub fn rates_and_secrecy(h: &NormalizedGains, p: &PowerAllocation) -> Vec<UserRates> {
    (0..h.user.len())
        .map(|k| {
            let rate = half_log2_1p(sinr(h.user[k], p, k));
            let eav_rate = half_log2_1p(sinr(h.eav, p, k));
            UserRates { rate, eav_rate, secrecy: (rate - eav_rate).max(0.0) }
        })
        .collect()
}

pub fn secrecy_sum_rate(h: &NormalizedGains, p: &PowerAllocation) -> f64 {
    let mut theta = 0.0;
    let mut ssr = 0.0;
    for k in (0..h.user.len()).rev() {
        ssr += secrecy_term(h.user[k], h.eav, p.p[k], theta);
        theta += p.p[k];
    }
    ssr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Secrecy sum-rate, bits/s/Hz.
    pub ssr: f64,
    /// Trade-off `ssr - alpha (theta_1 + P_c)`.
    pub psi: f64,
    /// Ratio `ssr / (theta_1 + P_c)`, bits/s/Hz per watt.
    pub zeta: f64,
    pub alpha: f64,
}

pub fn objectives(h: &NormalizedGains, p: &PowerAllocation, alpha: f64, p_circuit: f64) -> ObjectiveValue {
    let ssr = secrecy_sum_rate(h, p);
    let consumed = p.total() + p_circuit;
    ObjectiveValue { ssr, psi: ssr - alpha * consumed, zeta: ssr / consumed, alpha }
}

fn leq(a: f64, b: f64) -> bool {
    a <= b + CONSTRAINT_RTOL * a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Power budget `theta_1 <= P_max`.
    pub budget: bool,
    /// Per-user QoS `theta_k >= A_k theta_{k+1} + (A_k - 1) / H_k`.
    pub qos: Vec<bool>,
    /// SIC decodability `gamma_{k->i} >= gamma_{k->k}` for all `i > k`.
    pub sic: bool,
    pub nonnegative: bool,
}

impl ConstraintReport {
    pub fn all_hold(&self) -> bool {
        self.budget && self.sic && self.nonnegative && self.qos.iter().all(|&q| q)
    }
}

pub fn check_constraints(h: &NormalizedGains, p: &PowerAllocation, qos: &QosParams, p_max: f64) -> ConstraintReport {
    let k_users = h.user.len();
    let qos_ok = (0..k_users)
        .map(|k| {
            let need = qos.a[k] * p.theta(k + 1) + (qos.a[k] - 1.0) / h.user[k];
            leq(need, p.theta(k))
        })
        .collect();
    let sic = (0..k_users.saturating_sub(1)).all(|k| {
        let own = sinr(h.user[k], p, k);
        (k + 1..k_users).all(|i| leq(own, sinr(h.user[i], p, k)))
    });
    ConstraintReport {
        budget: leq(p.total(), p_max),
        qos: qos_ok,
        sic,
        nonnegative: p.p.iter().all(|&x| x >= 0.0),
    }
}

/// Whether the effective gains keep the SIC order (nondecreasing), which is
/// equivalent to the SIC constraints for every strictly positive allocation.
pub fn sic_order_holds(h: &NormalizedGains) -> bool {
    h.user.windows(2).all(|w| leq(w[0], w[1]))
}

/// Minimum total power meeting every QoS target:
/// `sum_k (A_k - 1)/H_k prod_{j<k} A_j`. Infinite when a needed gain is zero.
pub fn p_min(h: &NormalizedGains, qos: &QosParams) -> f64 {
    let mut total = 0.0;
    let mut prefix = 1.0;
    for (hk, a) in h.user.iter().zip(&qos.a) {
        if *a > 1.0 {
            if *hk <= 0.0 {
                return f64::INFINITY;
            }
            total += (a - 1.0) / hk * prefix;
        }
        prefix *= a;
    }
    total
}

/// A scenario with users in SIC order and the system parameters solvers need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    /// Users permuted into SIC order.
    pub scenario: Scenario,
    pub order: UserOrder,
    pub amps: Amplitudes,
    pub qos: QosParams,
    pub p_max: f64,
    pub p_circuit: f64,
}

impl Problem {
    pub fn new(s: &Scenario, cfg: &NetworkConfig) -> Result<Self, ConfigError> {
        let r_min: Vec<f64> = (0..s.k()).map(|k| cfg.r_min_of(k)).collect();
        Self::with_params(s, &r_min, cfg.p_max.0, cfg.p_circuit.0)
    }

    /// `r_min` is indexed like the scenario's users (generation order).
    pub fn with_params(s: &Scenario, r_min: &[f64], p_max: f64, p_circuit: f64) -> Result<Self, ConfigError> {
        s.check_dims()?;
        if r_min.len() != s.k() {
            return Err(ConfigError::Dimension(format!("{} rate targets for {} users", r_min.len(), s.k())));
        }
        let order = order_users(s);
        let perm = &order.perm;
        let mut layout = s.layout.clone();
        if let Some(l) = layout.as_mut() {
            l.users = perm.iter().map(|&i| l.users[i]).collect();
        }
        let sorted = Scenario {
            layout,
            h: perm.iter().map(|&i| s.h[i]).collect(),
            h_e: s.h_e,
            g: s.g.clone(),
            g_user: s.g_user.iter().map(|row| perm.iter().map(|&i| row[i]).collect()).collect(),
            g_eav: s.g_eav.clone(),
            noise_user: perm.iter().map(|&i| s.noise_user[i]).collect(),
            noise_eav: s.noise_eav,
        };
        let sorted_rates: Vec<f64> = perm.iter().map(|&i| r_min[i]).collect();
        Ok(Self {
            amps: Amplitudes::from_scenario(&sorted),
            scenario: sorted,
            order,
            qos: QosParams::from_rates(&sorted_rates),
            p_max,
            p_circuit,
        })
    }

    pub fn k(&self) -> usize {
        self.amps.k()
    }

    pub fn m(&self) -> usize {
        self.amps.m()
    }

    pub fn gains(&self, rho: &ReflectionVector) -> NormalizedGains {
        self.amps.gains(rho.as_slice())
    }

    pub fn p_min(&self, rho: &ReflectionVector) -> f64 {
        p_min(&self.gains(rho), &self.qos)
    }

    /// Errors with [`SolveError::Infeasible`] unless `P_max >= P_min`.
    pub fn require_feasible(&self, h: &NormalizedGains) -> Result<f64, SolveError> {
        let pm = p_min(h, &self.qos);
        if pm <= self.p_max {
            Ok(pm)
        } else {
            Err(SolveError::Infeasible { p_min: pm, p_max: self.p_max })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gains(user: Vec<f64>, eav: f64) -> NormalizedGains {
        NormalizedGains { user, eav, bds: 0 }
    }

    fn one_bd(h: f64, g: f64, gk: f64) -> Scenario {
        Scenario::from_channels(vec![h], 0.5, vec![g], vec![vec![gk]], vec![0.1], vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn gains_examples() {
        let s = one_bd(1.0, 1.0, 1.0);
        let off = effective_gains(&s, &ReflectionVector::zeros(1)).unwrap();
        assert_eq!(off.user, vec![1.0]);
        let on = effective_gains(&s, &ReflectionVector::ones(1)).unwrap();
        assert!((on.user[0] - 4.0).abs() < 1e-15);

        let two = Scenario::from_channels(
            vec![1.0],
            0.5,
            vec![1.0, 2.0],
            vec![vec![1.0], vec![0.5]],
            vec![0.1, 0.1],
            vec![1.0],
            1.0,
        )
        .unwrap();
        let h = effective_gains(&two, &ReflectionVector::ones(2)).unwrap();
        assert!((h.user[0] - 9.0).abs() < 1e-14);
        assert!(effective_gains(&two, &ReflectionVector::ones(1)).is_err());
    }

    #[test]
    fn reflection_bounds() {
        assert!(ReflectionVector::new(vec![0.0, 1.0, 0.3]).is_ok());
        assert!(ReflectionVector::new(vec![1.0 + 1e-12]).is_err());
        assert!(ReflectionVector::new(vec![-0.1]).is_err());
    }

    #[test]
    fn sinr_examples() {
        let p = PowerAllocation::new(vec![1.0]);
        assert_eq!(sinr(3.0, &p, 0), 3.0);
        let p = PowerAllocation::new(vec![3.0, 1.0]);
        assert!((sinr(1.0, &p, 0) - 1.5).abs() < 1e-15);
        let p = PowerAllocation::new(vec![0.0, 1.0]);
        assert_eq!(sinr(5.0, &p, 0), 0.0);
    }

    #[test]
    fn rate_examples() {
        let p = PowerAllocation::new(vec![1.0, 2.0]);
        for r in rates_and_secrecy(&gains(vec![2.0, 2.0], 2.0), &p) {
            assert_eq!(r.secrecy, 0.0);
        }
        let r = rates_and_secrecy(&gains(vec![3.0], 0.0), &PowerAllocation::new(vec![1.0]));
        assert!((r[0].secrecy - 1.0).abs() < 1e-15);
        let r = rates_and_secrecy(&gains(vec![1.0], 4.0), &PowerAllocation::new(vec![1.0]));
        assert_eq!(r[0].secrecy, 0.0);
        assert!(r[0].rate < r[0].eav_rate);
    }

    #[test]
    fn objective_examples() {
        let h = gains(vec![1.0, 2.0], 9.0);
        let p = PowerAllocation::new(vec![0.5, 0.5]);
        let v = objectives(&h, &p, 0.3, 1.0);
        assert_eq!(v.ssr, 0.0);
        assert_eq!(v.zeta, 0.0);
        assert!((v.psi + 0.3 * 2.0).abs() < 1e-15);

        let h = gains(vec![3.0], 0.0);
        let p = PowerAllocation::new(vec![1.0]);
        assert_eq!(objectives(&h, &p, 0.0, 1.0).psi, objectives(&h, &p, 0.0, 1.0).ssr);
        assert!((objectives(&h, &p, 0.0, 1.0).zeta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constraint_examples() {
        let qos = QosParams::from_rates(&[1.0, 1.0]);
        let h = gains(vec![1.0, 2.0], 0.5);
        let p = PowerAllocation::new(vec![60.0, 40.0]);
        let rep = check_constraints(&h, &p, &qos, 100.0);
        assert!(rep.budget && rep.sic);
        let rep = check_constraints(&h, &p, &qos, 99.0);
        assert!(!rep.budget);

        let zero = PowerAllocation::new(vec![0.0, 0.0]);
        let rep = check_constraints(&h, &zero, &qos, 100.0);
        assert!(rep.qos.iter().all(|q| !q));

        let swapped = gains(vec![2.0, 1.0], 0.5);
        assert!(!check_constraints(&swapped, &p, &qos, 100.0).sic);
    }

    #[test]
    fn p_min_examples() {
        let q = QosParams::from_rates(&[1.0]);
        assert_eq!(q.a, vec![4.0]);
        assert!((p_min(&gains(vec![1.0], 0.0), &q) - 3.0).abs() < 1e-15);
        let q0 = QosParams::from_rates(&[0.0, 0.0]);
        assert_eq!(p_min(&gains(vec![1.0, 2.0], 0.0), &q0), 0.0);
        let q = QosParams::from_rates(&[1.0, 1.0]);
        assert!((p_min(&gains(vec![1.0, 2.0], 0.0), &q) - 9.0).abs() < 1e-14);
        assert_eq!(p_min(&gains(vec![0.0, 2.0], 0.0), &q), f64::INFINITY);
    }

    #[test]
    fn problem_sorts_users_and_rates() {
        let s = Scenario::from_channels(
            vec![3.0, 1.0, 2.0],
            0.5,
            vec![],
            vec![],
            vec![],
            vec![1.0; 3],
            1.0,
        )
        .unwrap();
        let pr = Problem::with_params(&s, &[0.5, 1.0, 1.5], 10.0, 1.0).unwrap();
        assert_eq!(pr.order.perm, vec![1, 2, 0]);
        assert_eq!(pr.scenario.h, vec![1.0, 2.0, 3.0]);
        assert_eq!(pr.qos.a, vec![4.0, 8.0, 2.0]);
    }

    proptest! {
        #[test]
        fn zero_reflection_is_direct(h in prop::collection::vec(1e-3f64..10.0, 1..4),
                                     g in prop::collection::vec(1e-3f64..10.0, 0..3),
                                     he in 1e-3f64..10.0) {
            let k = h.len();
            let m = g.len();
            let s = Scenario::from_channels(h.clone(), he, g, vec![vec![0.7; k]; m], vec![0.3; m],
                                            vec![0.5; k], 2.0).unwrap();
            let out = effective_gains(&s, &ReflectionVector::zeros(m)).unwrap();
            for (hk, o) in h.iter().zip(&out.user) {
                prop_assert!((hk * hk / 0.5 - o).abs() <= 1e-12 * o.abs());
            }
            prop_assert!((he * he / 2.0 - out.eav).abs() <= 1e-12 * out.eav);
        }

        #[test]
        fn gains_nondecreasing_in_each_rho(r in prop::collection::vec(0.0f64..1.0, 2),
                                           bump in 0.0f64..1.0, which in 0usize..2) {
            let s = Scenario::from_channels(vec![0.2, 0.4], 0.3, vec![1.5, 0.8],
                vec![vec![0.1, 0.3], vec![0.6, 0.2]], vec![0.4, 0.05], vec![1.0, 1.0], 1.0).unwrap();
            let base = effective_gains(&s, &ReflectionVector::new(r.clone()).unwrap()).unwrap();
            let mut up = r.clone();
            up[which] = (up[which] + bump).min(1.0);
            let more = effective_gains(&s, &ReflectionVector::new(up).unwrap()).unwrap();
            for (a, b) in base.user.iter().zip(&more.user) {
                prop_assert!(b >= a);
            }
            prop_assert!(more.eav >= base.eav);
        }

        #[test]
        fn zeta_times_power_is_ssr(hu in prop::collection::vec(0.1f64..100.0, 1..4),
                                   he in 0.1f64..100.0, scale in 0.01f64..10.0, pc in 0.1f64..5.0) {
            let k = hu.len();
            let p = PowerAllocation::new((0..k).map(|i| scale * (i as f64 + 1.0)).collect());
            let v = objectives(&gains(hu, he), &p, 0.2, pc);
            prop_assert!(v.ssr >= 0.0 && v.zeta >= 0.0);
            prop_assert!((v.zeta * (p.total() + pc) - v.ssr).abs() <= 1e-12 * v.ssr.max(1.0));
        }
    }
}
