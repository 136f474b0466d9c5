//! Scenario loading, the closed-loop driver, artifacts and batch runs.

pub mod batch;
pub mod emit;
pub mod gravity_map;
pub mod scenario;
pub mod sim;

pub use scenario::{Scenario, Setup};
pub use sim::{
    landing_check, run, run_from, ControlMode, LandingConditions, Minima, RunOutput, RunResult, RunStatus, RunningMin,
    TelemetryRow, FILTER_TOL, TELEMETRY_COLUMNS, VIOLATION_TOL,
};
