//! Repair of failed executions and of solutions that violate the
//! original problem.

pub mod ecl;
pub mod fdc;
pub mod feasibility;

use thiserror::Error;

pub use ecl::{run_ecl, EclResult, EclState, EclStep, Repair, DEFAULT_K};
pub use fdc::{run_fdc, stage_for, FdcConfig, FdcDriver, FdcResult, FdcStage, FdcState, FdcStep, DEFAULT_GAMMA, DEFAULT_L};
pub use feasibility::{validate_feasibility, ConstraintId, FeasibilityResult, Residual, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefineError {
    #[error("execution already succeeded; nothing to correct")]
    AlreadySucceeded,
    #[error("solution is already feasible; nothing to correct")]
    AlreadyFeasible,
    #[error("invalid refinement settings: {0}")]
    InvalidConfig(String),
}
