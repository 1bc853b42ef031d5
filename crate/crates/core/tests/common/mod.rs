#![allow(dead_code)]

use see_core::closedform::solve_closed_form;
use see_core::model::Amplitudes;
use see_core::{generate_scenario, NetworkConfig, Objective, Problem};

/// Effective gains from the amplitudes, written out term by term.
pub fn gains(amps: &Amplitudes, rho: &[f64]) -> (Vec<f64>, f64) {
    let k = amps.user_direct.len();
    let mut user = Vec::with_capacity(k);
    for u in 0..k {
        let mut a = amps.user_direct[u];
        for (m, r) in rho.iter().enumerate() {
            a += r.sqrt() * amps.user_via[m][u];
        }
        user.push(a * a);
    }
    let mut e = amps.eav_direct;
    for (m, r) in rho.iter().enumerate() {
        e += r.sqrt() * amps.eav_via[m];
    }
    (user, e * e)
}

/// Secrecy ratio and total power when users `1..K-1` get the least power
/// meeting their rate target on top of `p_last` for user `K`.
pub fn ratio_at(user: &[f64], eav: f64, a: &[f64], p_last: f64, p_circuit: f64) -> (f64, f64) {
    let k = user.len();
    let mut ssr = 0.0;
    let mut interference = 0.0;
    let mut p = p_last;
    let mut i = k;
    loop {
        i -= 1;
        let legit = 1.0 + user[i] * p / (user[i] * interference + 1.0);
        let leak = 1.0 + eav * p / (eav * interference + 1.0);
        if legit > leak {
            ssr += 0.5 * (legit / leak).log2();
        }
        interference += p;
        if i == 0 {
            break;
        }
        p = (a[i - 1] - 1.0).max(0.0) * (interference + 1.0 / user[i - 1]);
    }
    (ssr / (interference + p_circuit), interference)
}

/// Smallest budget meeting every rate target.
pub fn least_power(user: &[f64], a: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut prefix = 1.0;
    for (h, a) in user.iter().zip(a) {
        total += (a - 1.0).max(0.0) / h * prefix;
        prefix *= a;
    }
    total
}

/// Drops under `cfg` whose closed-form solve succeeds, in trial order.
pub fn feasible_problems(cfg: &NetworkConfig, n: usize) -> Vec<Problem> {
    let mut out = Vec::with_capacity(n);
    let mut t = 0;
    while out.len() < n {
        let p = Problem::new(&generate_scenario(cfg, t).unwrap(), cfg).unwrap();
        if solve_closed_form(&p, Objective::Ratio).is_ok() {
            out.push(p);
        }
        t += 1;
        assert!(t < 100 * n as u64 + 1000, "too few feasible drops");
    }
    out
}
