//! Random network drops and deterministic path-loss channels.
//!
//! A drop places K users and the eavesdropper uniformly in a disk around the
//! transmitter (which sits at the origin) and M backscatter devices in a
//! smaller disk. Every link is line-of-sight with power gain `d^-γ`; the
//! stored coefficient is the amplitude `d^-γ/2`.
//!
//! Drops are derived from `(seed, trial, attempt)` only, so the same trial
//! can be regenerated on any thread. Nodes are drawn in a fixed order (users,
//! eavesdropper, then BDs one by one), which makes the drops nested in M: the
//! first BD of an `M = 4` drop is the BD of the `M = 1` drop with the same key.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::units::{self, Watts};

/// Links shorter than this are redrawn.
pub const MIN_DISTANCE_M: f64 = 0.1;

const MAX_PLACEMENT_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Where the eavesdropper sits in a drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EavPlacement {
    /// Uniform in the user disk.
    #[default]
    UniformDisk,
    /// Pinned at a point (position sweeps). The uniform draw is still
    /// consumed so that users and BDs match the uniform drop of the same key.
    Fixed { x: f64, y: f64 },
}

/// Either one value for every user or one value per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerUser {
    pub fn get(&self, k: usize) -> f64 {
        match self {
            PerUser::Uniform(v) => *v,
            PerUser::Each(v) => v[k],
        }
    }
}

/// System parameters of one network. All powers are in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub k: usize,
    pub m: usize,
    pub user_radius: f64,
    pub bd_radius: f64,
    pub pathloss_exponent: f64,
    pub noise_user: Watts,
    pub noise_eav: Watts,
    /// Minimum rate per user in bits/s/Hz.
    pub r_min: PerUser,
    pub p_max: Watts,
    pub p_circuit: Watts,
    pub seed: u64,
    pub eav_placement: EavPlacement,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            k: 2,
            m: 1,
            user_radius: 50.0,
            bd_radius: 5.0,
            pathloss_exponent: 3.0,
            noise_user: Watts(units::dbm_to_watts(-30.0)),
            noise_eav: Watts(units::dbm_to_watts(-30.0)),
            r_min: PerUser::Uniform(1.0),
            p_max: Watts(units::dbm_to_watts(50.0)),
            p_circuit: Watts(units::dbm_to_watts(30.0)),
            seed: 0,
            eav_placement: EavPlacement::UniformDisk,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 1 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        let positive = [
            ("user_radius", self.user_radius),
            ("bd_radius", self.bd_radius),
            ("pathloss_exponent", self.pathloss_exponent),
            ("noise_user", self.noise_user.0),
            ("noise_eav", self.noise_eav.0),
            ("p_max", self.p_max.0),
            ("p_circuit", self.p_circuit.0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.user_radius <= MIN_DISTANCE_M || self.bd_radius <= MIN_DISTANCE_M {
            return Err(ConfigError::Invalid(format!(
                "disk radii must exceed the {MIN_DISTANCE_M} m distance floor"
            )));
        }
        match &self.r_min {
            PerUser::Uniform(r) if *r < 0.0 || !r.is_finite() => {
                return Err(ConfigError::Invalid(format!("r_min must be >= 0, got {r}")))
            }
            PerUser::Each(v) if v.len() != self.k => {
                return Err(ConfigError::Invalid(format!(
                    "r_min has {} entries for {} users",
                    v.len(),
                    self.k
                )))
            }
            PerUser::Each(v) if v.iter().any(|r| *r < 0.0 || !r.is_finite()) => {
                return Err(ConfigError::Invalid("r_min entries must be >= 0".into()))
            }
            _ => {}
        }
        if let EavPlacement::Fixed { x, y } = self.eav_placement {
            if Point::new(x, y).distance(&Point::ORIGIN) < MIN_DISTANCE_M {
                return Err(ConfigError::Invalid(
                    "fixed eavesdropper position is inside the distance floor".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn r_min_of(&self, user: usize) -> f64 {
        self.r_min.get(user)
    }
}

/// Node positions of one drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub users: Vec<Point>,
    pub eav: Point,
    pub bds: Vec<Point>,
}

impl Layout {
    /// Keeps the first `m` backscatter devices.
    pub fn with_bds(&self, m: usize) -> Layout {
        Layout {
            users: self.users.clone(),
            eav: self.eav,
            bds: self.bds[..m].to_vec(),
        }
    }
}

/// Raw channel amplitudes and noise levels of one drop.
///
/// Indexing of the BD links is `[bd][user]`. Users are in generation order;
/// see [`crate::model::Problem`] for the SIC-ordered view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub layout: Option<Layout>,
    pub h: Vec<f64>,
    pub h_e: f64,
    pub g: Vec<f64>,
    pub g_user: Vec<Vec<f64>>,
    pub g_eav: Vec<f64>,
    pub noise_user: Vec<f64>,
    pub noise_eav: f64,
}

impl Scenario {
    pub fn k(&self) -> usize {
        self.h.len()
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    /// Builds a scenario directly from channel amplitudes.
    pub fn from_channels(
        h: Vec<f64>,
        h_e: f64,
        g: Vec<f64>,
        g_user: Vec<Vec<f64>>,
        g_eav: Vec<f64>,
        noise_user: Vec<f64>,
        noise_eav: f64,
    ) -> Result<Self, ConfigError> {
        let s = Self {
            layout: None,
            h,
            h_e,
            g,
            g_user,
            g_eav,
            noise_user,
            noise_eav,
        };
        s.check_dims()?;
        Ok(s)
    }

    pub fn check_dims(&self) -> Result<(), ConfigError> {
        let (k, m) = (self.k(), self.m());
        if self.noise_user.len() != k {
            return Err(ConfigError::Dimension(format!(
                "{} noise levels for {k} users",
                self.noise_user.len()
            )));
        }
        if self.g_user.len() != m || self.g_eav.len() != m {
            return Err(ConfigError::Dimension(format!(
                "BD link tables do not match {m} devices"
            )));
        }
        if let Some(row) = self.g_user.iter().find(|row| row.len() != k) {
            return Err(ConfigError::Dimension(format!(
                "BD-to-user row has {} entries for {k} users",
                row.len()
            )));
        }
        Ok(())
    }

    /// Keeps the first `m` backscatter devices.
    pub fn with_bds(&self, m: usize) -> Scenario {
        assert!(m <= self.m(), "requested {m} BDs from a drop with {}", self.m());
        Scenario {
            layout: self.layout.as_ref().map(|l| l.with_bds(m)),
            h: self.h.clone(),
            h_e: self.h_e,
            g: self.g[..m].to_vec(),
            g_user: self.g_user[..m].to_vec(),
            g_eav: self.g_eav[..m].to_vec(),
            noise_user: self.noise_user.clone(),
            noise_eav: self.noise_eav,
        }
    }

    /// Writes the node table as CSV (`node,x,y,role`).
    pub fn write_layout_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "x", "y", "role"])?;
        w.write_record(["tx", "0", "0", "transmitter"])?;
        if let Some(l) = &self.layout {
            for (i, p) in l.users.iter().enumerate() {
                w.write_record([format!("user{}", i + 1), p.x.to_string(), p.y.to_string(), "user".into()])?;
            }
            w.write_record(["eav".to_string(), l.eav.x.to_string(), l.eav.y.to_string(), "eavesdropper".into()])?;
            for (i, p) in l.bds.iter().enumerate() {
                w.write_record([format!("bd{}", i + 1), p.x.to_string(), p.y.to_string(), "backscatter".into()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Amplitude of a line-of-sight link of length `d` meters.
pub fn path_amplitude(d: f64, exponent: f64) -> f64 {
    d.powf(-exponent / 2.0)
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for a key tuple. Different `domain` values give
/// unrelated streams for the same trial (geometry, CSI errors, PSO...).
pub fn stream_rng(seed: u64, domain: u64, trial: u64, attempt: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    let mut state = mix64(seed ^ mix64(domain));
    for (i, word) in [trial, attempt, 0x5EED, 0xD0E5].into_iter().enumerate() {
        state = mix64(state ^ word.wrapping_mul(0xA24B_AED4_963E_E407));
        bytes[i * 8..(i + 1) * 8].copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

const GEOMETRY_STREAM: u64 = 1;

fn uniform_in_disk<R: Rng>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.gen::<f64>();
    Point::new(r * theta.cos(), r * theta.sin())
}

fn place<R: Rng>(rng: &mut R, radius: f64, avoid: &[Point]) -> Point {
    for _ in 0..MAX_PLACEMENT_DRAWS {
        let p = uniform_in_disk(rng, radius);
        if avoid.iter().all(|q| p.distance(q) >= MIN_DISTANCE_M) {
            return p;
        }
    }
    // radii are validated to exceed the floor, so this is unreachable in practice
    panic!("could not place a node {MIN_DISTANCE_M} m away from its neighbours");
}

/// Draws node positions for `(cfg.seed, trial, attempt)`.
pub fn generate_layout(cfg: &NetworkConfig, trial: u64, attempt: u64) -> Layout {
    let mut rng = stream_rng(cfg.seed, GEOMETRY_STREAM, trial, attempt);
    let tx = [Point::ORIGIN];
    let users: Vec<Point> = (0..cfg.k).map(|_| place(&mut rng, cfg.user_radius, &tx)).collect();
    let drawn_eav = place(&mut rng, cfg.user_radius, &tx);
    let eav = match cfg.eav_placement {
        EavPlacement::UniformDisk => drawn_eav,
        EavPlacement::Fixed { x, y } => Point::new(x, y),
    };
    let mut avoid = users.clone();
    avoid.push(eav);
    avoid.push(Point::ORIGIN);
    let bds = (0..cfg.m).map(|_| place(&mut rng, cfg.bd_radius, &avoid)).collect();
    Layout { users, eav, bds }
}

/// Path-loss channels for a layout under `cfg`'s exponent and noise levels.
pub fn channels_for_layout(layout: &Layout, cfg: &NetworkConfig) -> Scenario {
    let gamma = cfg.pathloss_exponent;
    let amp = |a: &Point, b: &Point| path_amplitude(a.distance(b), gamma);
    let tx = Point::ORIGIN;
    Scenario {
        h: layout.users.iter().map(|u| amp(&tx, u)).collect(),
        h_e: amp(&tx, &layout.eav),
        g: layout.bds.iter().map(|b| amp(&tx, b)).collect(),
        g_user: layout
            .bds
            .iter()
            .map(|b| layout.users.iter().map(|u| amp(b, u)).collect())
            .collect(),
        g_eav: layout.bds.iter().map(|b| amp(b, &layout.eav)).collect(),
        noise_user: vec![cfg.noise_user.0; layout.users.len()],
        noise_eav: cfg.noise_eav.0,
        layout: Some(layout.clone()),
    }
}

/// One random drop, deterministic in `(cfg.seed, trial_index)`.
pub fn generate_scenario(cfg: &NetworkConfig, trial_index: u64) -> Result<Scenario, ConfigError> {
    cfg.validate()?;
    Ok(channels_for_layout(&generate_layout(cfg, trial_index, 0), cfg))
}

/// SIC order of the users and the eavesdropper's rank within it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserOrder {
    /// `perm[j]` is the original index of the j-th weakest user.
    pub perm: Vec<usize>,
    /// 1-based rank `m_e`: exactly `m_e - 1` users sit at or below the
    /// eavesdropper's direct gain.
    pub eav_rank: usize,
}

impl fmt::Display for UserOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.perm.iter().map(|i| format!("u{}", i + 1)).collect();
        write!(f, "[{}] eav rank {}", names.join(" < "), self.eav_rank)
    }
}

/// Sorts users by ascending direct normalized gain `h_k^2 / sigma_k^2`.
///
/// Equal gains keep their original relative order. A user tied with the
/// eavesdropper is counted below it.
pub fn order_users(s: &Scenario) -> UserOrder {
    let direct: Vec<f64> = s.h.iter().zip(&s.noise_user).map(|(h, n)| h * h / n).collect();
    let eav = s.h_e * s.h_e / s.noise_eav;
    let mut perm: Vec<usize> = (0..s.k()).collect();
    perm.sort_by(|&a, &b| direct[a].total_cmp(&direct[b]).then(a.cmp(&b)));
    let below = direct.iter().filter(|&&d| d <= eav).count();
    UserOrder { perm, eav_rank: below + 1 }
}
