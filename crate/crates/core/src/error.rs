use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("steering angle {0} rad is outside (-pi/2, pi/2)")]
    SteeringOutOfRange(f64),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("at least {min} trajectories required, got {got}")]
    TooFewTrajectories { min: usize, got: usize },
    #[error("empty trajectory set")]
    EmptyTree,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid velocity problem: {0}")]
    InvalidProblem(String),
    #[error("optimizer did not produce a usable solution")]
    SolverFailed,
}
