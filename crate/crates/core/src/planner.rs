//! Scenario to solution: assembly, initial guess, solve and extraction.

use thiserror::Error;

use crate::nlp::{solve, KktError, SolveReport, SolverConfig};
use crate::ocp::{assemble, extract, initial_guess, DecisionLayout, Extracted, OcpError, OcpOptions};
use crate::scenario::{theoretical_lower_bound, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Solver(#[from] KktError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub report: SolveReport,
    pub layout: DecisionLayout,
    pub solution: Extracted,
    pub lower_bound: f64,
}

impl Plan {
    pub fn converged(&self) -> bool {
        self.report.converged()
    }
}

/// Transcribes and solves `scn`. Non-convergence is reported through
/// `report.status`, not as an error.
pub fn plan(scn: &Scenario, opts: &OcpOptions, solver: &SolverConfig) -> Result<Plan, PlanError> {
    solver.validate().map_err(PlanError::Config)?;
    let (nlp, layout) = assemble(scn, &scn.transcription, opts)?;
    let x0 = initial_guess(scn, &layout, opts.guess)?;
    let report = solve(&nlp, &x0, solver)?;
    let solution = extract(&report.x, &layout, scn)?;
    Ok(Plan { report, layout, solution, lower_bound: theoretical_lower_bound(scn) })
}
