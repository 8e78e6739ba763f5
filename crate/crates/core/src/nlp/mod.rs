//! Nonlinear programming: problem interface, sparse factorization and the
//! interior-point solver.

pub mod ipm;
pub mod ldl;
pub mod problem;

pub use ipm::{
    iteration_log_tsv, kkt_residuals, solve, IterationRecord, KktError, KktResiduals, Multipliers, SolveReport,
    SolveStatus, SolverConfig,
};
pub use problem::{Element, ElementNlp, ElementNlpParts, NlpError, NlpProblem, Target};
