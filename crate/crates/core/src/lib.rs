//! Ecological robustness analysis of power-grid operating points.
//!
//! The pipeline reads a MATPOWER case ([`case`]), solves an AC power flow
//! ([`powerflow`]), turns the solved flows into an ecological flow matrix
//! ([`eco_matrix`]) and scores it with information-theoretic metrics
//! ([`metrics`]). [`contingency`] runs N-x survivability studies and
//! [`stats`] renders flow statistics and comparison reports.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case;
pub mod cases;
pub mod contingency;
pub mod eco_matrix;
pub mod metadata;
pub mod metrics;
pub mod powerflow;
pub mod stats;

use thiserror::Error;

pub use case::{parse_case, Branch, Bus, BusKind, CaseError, Generator, Network, OutageSet};
pub use cases::{load_case, LoadedCase};
pub use contingency::{
    enumerate, evaluate, survivability, ContingencyError, ContingencyResult, ContingencySpec,
    ElementClass, EvaluationOptions, SurvivabilityReport,
};
pub use eco_matrix::{
    build_eco_matrix, conservation_report, EcoFlowMatrix, FlowType, MatrixError, RedundancyMode,
};
pub use metadata::Metadata;
pub use metrics::{EcoMetrics, MetricsError};
pub use powerflow::{solve, PowerFlowError, PowerFlowSolution, SolverOptions};
pub use stats::{flow_stats, FlowStats, StatsError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: {error}")]
    Case {
        source_name: String,
        #[source]
        error: CaseError,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
