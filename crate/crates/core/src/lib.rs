//! Secrecy energy-efficiency optimization for downlink NOMA with ambient
//! backscatter devices and a passive eavesdropper.

pub mod cli;
pub mod closedform;
pub mod error;
pub mod experiments;
pub mod model;
pub mod scenario;
pub mod search;
pub mod units;

pub use closedform::{solve_closed_form, Method, Objective, SolveResult};
pub use error::{ConfigError, SolveError};
pub use model::{Problem, ReflectionVector};
pub use scenario::{generate_scenario, NetworkConfig, Scenario};
