//! Scenario files, run logs, parameter sweeps and log checks.

pub mod check;
pub mod log;
pub mod scenario;
pub mod sweep;

pub use scenario::load_scenario;
