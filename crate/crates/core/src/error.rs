use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// `P_max < P_min`: the QoS targets cannot all be met.
    #[error("infeasible: minimum power {p_min} W exceeds budget {p_max} W")]
    Infeasible { p_min: f64, p_max: f64 },
    #[error("reduced power objective is not concave on [{lo}, {hi}]")]
    NonConcave { lo: f64, hi: f64 },
    #[error("Dinkelbach iteration did not converge after {iterations} steps (last alpha {alpha}, F {residual})")]
    NoConvergence { iterations: usize, alpha: f64, residual: f64 },
    #[error("solver '{solver}' does not handle K = {k}, M = {m}")]
    Unsupported { solver: &'static str, k: usize, m: usize },
}

impl SolveError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolveError::Infeasible { .. })
    }
}
