//! Empirical stability studies: sampling of ellipticity classes, distance
//! records over parameter pairs, Hölder envelope fits and the flat-map
//! counterexample.

mod counterexample;
mod fit;
mod sampling;
mod sweep;

pub use counterexample::{analytic_control, flat_counterexample, flat_map, AnalyticControl, FlatMapSample};
pub use fit::{cubic_toy_points, fit_holder, HolderFit, MIN_DECADES};
pub use sampling::{rng_for, sample_at, sample_params, CellParams, CompactSetSpec, ProblemKind};
pub use sweep::{
    attach_finite, injectivity_probe, ray_steps, read_records, sweep, write_records,
    ConductivityModel, DroppedPair, ElasticityModel, ForwardModel, InjectivityReport, PairKind,
    RecoveredQuantity, StabilityRecord, SweepConfig, SweepOutput, INJECTIVITY_FLAG,
};

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::operator::ForwardError;
use crate::scalarization::ScalarError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid fit request: {0}")]
    InvalidFit(String),
    #[error("records span {decades:.3} decades of delta_F, at least 2 required")]
    InsufficientSpread { decades: f64 },
    #[error("fitted exponent {theta_precap} is not positive")]
    NonPositiveExponent { theta_precap: f64 },
    #[error("sample point {0} outside (0, 1]")]
    InvalidSamplePoint(f64),
    #[error("records file: {0}")]
    Records(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

impl StabilityError {
    /// Short variant name used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            StabilityError::InvalidSpec(_) => "InvalidSpec",
            StabilityError::InvalidFit(_) => "InvalidFit",
            StabilityError::InsufficientSpread { .. } => "InsufficientSpread",
            StabilityError::NonPositiveExponent { .. } => "NonPositiveExponent",
            StabilityError::InvalidSamplePoint(_) => "InvalidSamplePoint",
            StabilityError::Records(_) => "RecordsError",
            StabilityError::Forward(e) => e.name(),
            StabilityError::Numerics(NumericsError::ToleranceNotReached { .. }) => {
                "ToleranceNotReached"
            }
            StabilityError::Numerics(_) => "NumericsError",
            StabilityError::Scalar(_) => "ScalarError",
        }
    }
}
