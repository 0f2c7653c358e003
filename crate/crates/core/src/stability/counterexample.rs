use serde::{Deserialize, Serialize};

use crate::numerics::adaptive_quadrature;

use super::fit::{cubic_toy_points, fit_holder, HolderFit};
use super::StabilityError;

/// Relative step of the centered log-log difference.
const SLOPE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatMapSample {
    pub t: f64,
    #[serde(rename = "F_t")]
    pub f_t: f64,
    pub local_slope: f64,
}

fn rho(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        (-1.0 / (s * s)).exp()
    }
}

/// `F(t) = ∫₀ᵗ e^{-1/s²} ds`, integrated to relative accuracy `tol` against
/// the bound `t·e^{-1/t²}`.
pub fn flat_map(t: f64, tol: f64) -> Result<f64, StabilityError> {
    let scale = t * rho(t);
    Ok(adaptive_quadrature(rho, 0.0, t, tol * scale)?)
}

fn check_points(ts: &[f64]) -> Result<(), StabilityError> {
    match ts.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        Some(&t) => Err(StabilityError::InvalidSamplePoint(t)),
        None => Ok(()),
    }
}

fn log_slope(f_minus: f64, f_plus: f64) -> f64 {
    (f_plus.ln() - f_minus.ln()) / ((1.0 + SLOPE_STEP).ln() - (1.0 - SLOPE_STEP).ln())
}

/// Samples of the flat map with centered log-log slopes.
pub fn flat_counterexample(ts: &[f64], tol: f64) -> Result<Vec<FlatMapSample>, StabilityError> {
    check_points(ts)?;
    ts.iter()
        .map(|&t| {
            let f_t = flat_map(t, tol)?;
            let lo = flat_map(t * (1.0 - SLOPE_STEP), tol)?;
            let hi = flat_map(t * (1.0 + SLOPE_STEP), tol)?;
            Ok(FlatMapSample {
                t,
                f_t,
                local_slope: log_slope(lo, hi),
            })
        })
        .collect()
}

/// The analytic contrast case `F(t) = t³`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticControl {
    pub samples: Vec<FlatMapSample>,
    /// Envelope fit on pair records of the scalar toy `(|p³ − q³|, |p − q|)`.
    pub fit: HolderFit,
}

/// Grid size of the scalar toy used by [`analytic_control`].
pub const TOY_GRID: usize = 141;

pub fn analytic_control(ts: &[f64], n_bins: usize, slack: f64) -> Result<AnalyticControl, StabilityError> {
    check_points(ts)?;
    let cube = |t: f64| t * t * t;
    let samples = ts
        .iter()
        .map(|&t| FlatMapSample {
            t,
            f_t: cube(t),
            local_slope: log_slope(cube(t * (1.0 - SLOPE_STEP)), cube(t * (1.0 + SLOPE_STEP))),
        })
        .collect();
    let fit = fit_holder(&cubic_toy_points(TOY_GRID), n_bins, slack)?;
    Ok(AnalyticControl { samples, fit })
}
