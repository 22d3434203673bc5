use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("trajectory diverged: non-finite state at step {step}")]
    Diverged { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular network: {0}")]
    SingularNetwork(String),

    #[error("infeasible dispatch: P_m0 * X_eq / (E' |V_inf|) = {ratio} lies outside (-1, 1)")]
    InfeasibleDispatch { ratio: f64 },

    /// Carries the (amplitude, max e_z) sweep that was inspected.
    #[error("amplitude calibration failed: {reason}")]
    Calibration { reason: String, sweep: Vec<(f64, f64)> },

    #[error("degenerate coupling: the interface has no influence on the simulator, bound is vacuous")]
    DegenerateCoupling,

    #[error("constant estimation failed: {skipped} of {total} samples hit a singular algebraic solve")]
    Estimation { skipped: usize, total: usize },

    #[error("training diverged: non-finite loss at iteration {0}")]
    TrainingDiverged(usize),

    #[error("scale must be positive and finite, got {0}")]
    Scale(f64),

    #[error("empty score set")]
    EmptyScores,

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("no certificate: calibrated quantile is unbounded")]
    NoCertificate,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
