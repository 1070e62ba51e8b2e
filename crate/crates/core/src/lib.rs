//! Coverage of confidence intervals constructed after preliminary tests of
//! slope hypotheses in one-way analysis of covariance.
//!
//! The pipeline is: layout and contrast ([`design`]), the two-stage
//! selection rule ([`selection`]), conditional coverage kernels
//! ([`conditional`]), Monte Carlo estimators ([`montecarlo`]), the search for
//! the minimum coverage ([`search`]) and a raw refit check ([`oracle`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditional;
pub mod design;
pub mod design_file;
pub mod dist;
pub mod error;
pub mod montecarlo;
pub mod oracle;
pub mod search;
pub mod selection;

pub use conditional::ConditionalKernel;
pub use design::{
    build_design, build_geometry, critical_values, AncovaLayout, ContrastSpec, GeometryBundle,
    TwoStageConfig,
};
pub use design_file::DesignFile;
pub use error::{Error, Result};
pub use montecarlo::{CoverageEstimate, Estimator, Gate, SlopePoint};
pub use selection::{Region, ScaledSufficientStats, SelectionOutcome};
