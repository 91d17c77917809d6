//! Constrained device sizing across PVT corners.

mod callbacks;
mod problem;
mod spec;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::compiler::CompileError;
use crate::optim::{self, AlOptions, Status};

pub use callbacks::{make_callbacks, NlpCallbacks};
pub use problem::{build_problem, CornerCase, Device, GainCase, Group, SizingProblem, SwingCase, TypicalCase, VarInfo};
pub use spec::{CornerSpec, DesignVar, GainSpec, PolaritySpec, SaturationSpec, SizingSpec, SwingSpec};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SizingError {
    #[error("{0}")]
    Spec(String),
    #[error("no device table for corner {corner} at {temperature} °C: {detail}")]
    CornerTableMissing { corner: String, temperature: f64, detail: String },
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("solve failed at iterate: {0}")]
    SolveFailedAtIterate(AnalysisError),
}

impl SizingError {
    pub fn name(&self) -> &'static str {
        match self {
            SizingError::Spec(_) => "SpecError",
            SizingError::CornerTableMissing { .. } => "CornerTableMissing",
            SizingError::Compile(_) => "CompileError",
            SizingError::SolveFailedAtIterate(_) => "SolveFailedAtIterate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingResult {
    /// Final design-variable values in spec order.
    pub p_opt: Vec<(String, f64)>,
    pub status: Status,
    pub iterations: usize,
    pub constraint_violation: f64,
    pub objective: f64,
    /// Constraint rows at the solution.
    pub constraints: Vec<f64>,
    pub constraint_names: Vec<String>,
    pub merit_history: Vec<f64>,
}

/// Runs the augmented-Lagrangian solver on the sizing callbacks. Fails only
/// when the initial design cannot be evaluated.
pub fn optimize(cb: &NlpCallbacks<'_>, opts: &AlOptions) -> Result<SizingResult, SizingError> {
    let z0 = cb.initial_point();
    cb.evaluate(&z0)?;
    let r = optim::minimize(cb, &z0, opts);
    let p = cb.expand(&r.z);
    let problem = cb.problem();
    Ok(SizingResult {
        p_opt: problem.vars.iter().zip(p).map(|(v, x)| (v.name.clone(), x)).collect(),
        status: r.status,
        iterations: r.iterations,
        constraint_violation: r.violation,
        objective: r.f,
        constraints: r.c,
        constraint_names: problem.constraint_names(),
        merit_history: r.merit_history,
    })
}

impl SizingResult {
    /// Plain-text summary.
    pub fn report(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "status: {}", self.status.as_str());
        let _ = writeln!(s, "outer iterations: {}", self.iterations);
        let _ = writeln!(s, "objective: {:.16e}", self.objective);
        let _ = writeln!(s, "constraint violation: {:.16e}", self.constraint_violation);
        for (n, v) in &self.p_opt {
            let _ = writeln!(s, "{n} = {v:.16e}");
        }
        for (n, c) in self.constraint_names.iter().zip(&self.constraints) {
            let _ = writeln!(s, "  {n}: {c:.16e}");
        }
        s
    }
}
