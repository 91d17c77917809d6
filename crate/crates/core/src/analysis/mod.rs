//! Equation solving on top of the graph executor.

mod ac;
mod dc;
mod dcac;
pub mod output;
mod sensitivity;
mod tran;

use thiserror::Error;

use crate::graph::EvalError;
use crate::sparse::LuError;

pub use ac::{ac_matrices, ac_sweep, log_sweep, solve_ac, AcMatrices, AcPoint, AcSystem};
pub use dc::{solve_dc, DcSolution};
pub use dcac::{dcac_gradient, solve_dcac, AcLoss, DcacResult, GainDb};
pub use sensitivity::{adjoint_contract, dc_sensitivity, linear_solution_backprop};
pub use tran::{solve_tran, TranConfig, Trajectory};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("singular Jacobian: no pivot for unknown `{node}`")]
    SingularJacobian { index: usize, node: String },
    #[error("Newton iteration did not converge in {iterations} iterations (|F| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("at t = {t:e}: {source}")]
    Transient { t: f64, source: Box<AnalysisError> },
    #[error("{0}")]
    Config(String),
}

impl AnalysisError {
    pub fn name(&self) -> &'static str {
        match self {
            AnalysisError::Eval(_) => "EvalError",
            AnalysisError::SingularJacobian { .. } => "SingularJacobian",
            AnalysisError::NoConvergence { .. } => "NoConvergence",
            AnalysisError::Transient { source, .. } => source.name(),
            AnalysisError::Config(_) => "ConfigError",
        }
    }

    pub(crate) fn singular(e: LuError, names: &[String]) -> Self {
        match e {
            LuError::Singular { column } => AnalysisError::SingularJacobian {
                index: column,
                node: names.get(column).cloned().unwrap_or_else(|| column.to_string()),
            },
            LuError::NotSquare(r, c) => AnalysisError::Config(format!("system matrix is {r}x{c}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub abstol: f64,
    pub reltol: f64,
    pub max_iter: usize,
    /// Smallest damping factor tried by the line search.
    pub min_damping: f64,
    /// Starting point; the circuit's NodeSet-overlaid zeros when `None`.
    pub initial_x: Option<Vec<f64>>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { abstol: 1e-9, reltol: 1e-6, max_iter: 50, min_damping: 1.0 / (1u64 << 20) as f64, initial_x: None }
    }
}

impl NewtonConfig {
    fn check(&self) -> Result<(), AnalysisError> {
        if !(self.abstol > 0.0 && self.reltol > 0.0 && self.min_damping > 0.0 && self.min_damping <= 1.0) {
            return Err(AnalysisError::Config("Newton tolerances must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
