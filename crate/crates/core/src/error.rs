use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("linear solve did not converge (relative residual {residual:.3e} after {iterations} iterations)")]
    Solver { residual: f64, iterations: usize },

    #[error("power iteration stagnated after {iterations} iterations (last relative change {change:.3e})")]
    Stagnation { iterations: usize, change: f64 },

    #[error("time step {dt} violates the CFL limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("unstable evolution at t = {time}: energy grew by {growth:.3e} (relative) in one step")]
    Instability { time: f64, growth: f64 },

    #[error("flow integration lost energy accuracy: relative drift {drift:.3e} exceeds {tolerance:.1e}; reduce dt")]
    EnergyDrift { drift: f64, tolerance: f64 },

    #[error("escape function construction failed: {0}")]
    Construction(String),

    #[error("all sweep points failed; first error: {0}")]
    SweepFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Input(msg.into()))
}
