use thiserror::Error;

use crate::model::{SolverResult, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network specification: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("stationary iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    StationaryNotConverged { iterations: usize, residual: f64 },

    #[error("chain exploration exceeded {limit} states")]
    ChainTooLarge { limit: usize },

    #[error("window lookup table has fewer than two feasible grid points")]
    TableTooSmall,

    #[error("dual iteration did not converge after {restarts} step-size restarts (last change {last_change:e})")]
    DualNotConverged { restarts: usize, last_change: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})", iterations = .0.diagnostics.iterations, residual = .0.diagnostics.residual_norm)]
    NotConverged(Box<SolverResult>),

    #[error("link `{link}` is driven to utilization {utilization:.4} at every consistent operating point")]
    Infeasible {
        link: String,
        utilization: f64,
        best: Box<SolverResult>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Partial result carried by solver failures, if any.
    pub fn partial_result(&self) -> Option<&SolverResult> {
        match self {
            Error::NotConverged(best) => Some(best),
            Error::Infeasible { best, .. } => Some(best),
            _ => None,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{}: {}", v.field, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}
