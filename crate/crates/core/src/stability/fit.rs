use serde::{Deserialize, Serialize};

use super::StabilityError;

/// Minimum decades of `δ_F` that usable records must span.
pub const MIN_DECADES: f64 = 2.0;

/// Empirical envelope `δ_R ≤ C · δ_F^θ · e^{slack}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub theta: f64,
    /// Slope of the bin-maxima regression before capping at 1.
    pub theta_precap: f64,
    /// `ln C`; `-inf` (serialized as null) when every `δ_R` is zero.
    #[serde(rename = "log_C", with = "nullable_f64")]
    pub log_c: f64,
    pub n_bins: usize,
    pub slack: f64,
    /// Largest `ln δ_R − θ ln δ_F − ln C` over the records used.
    pub max_violation: f64,
    pub records_used: usize,
    /// Records excluded because `δ_F` or `δ_R` is not positive and finite.
    pub dropped: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub constant_r: bool,
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

impl HolderFit {
    pub fn constant(&self) -> f64 {
        self.log_c.exp()
    }

    /// Envelope value `C · δ_F^θ`.
    pub fn envelope(&self, delta_f: f64) -> f64 {
        (self.theta * delta_f.ln() + self.log_c).exp()
    }
}

/// Fits a Hölder envelope to `(δ_F, δ_R)` points.
///
/// Points are binned by `ln δ_F` into `n_bins` equal-width bins, the point
/// with the largest `ln δ_R` in each nonempty bin is kept, and a least-squares
/// line through those maxima gives the slope. The slope is capped at 1, then
/// `ln C` is raised just enough that every point lies within `slack` (log units)
/// of the envelope.
pub fn fit_holder(points: &[(f64, f64)], n_bins: usize, slack: f64) -> Result<HolderFit, StabilityError> {
    if n_bins < 2 {
        return Err(StabilityError::InvalidFit(format!("n_bins must be at least 2, got {n_bins}")));
    }
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(StabilityError::InvalidFit(format!("slack must be finite and >= 0, got {slack}")));
    }
    let positive_f: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(f, r)| f > 0.0 && f.is_finite() && r.is_finite() && r >= 0.0)
        .collect();
    if !positive_f.is_empty() && positive_f.iter().all(|&(_, r)| r == 0.0) {
        return Ok(HolderFit {
            theta: 1.0,
            theta_precap: 1.0,
            log_c: f64::NEG_INFINITY,
            n_bins,
            slack,
            max_violation: f64::NEG_INFINITY,
            records_used: positive_f.len(),
            dropped: points.len() - positive_f.len(),
            constant_r: true,
        });
    }

    let logs: Vec<(f64, f64)> = positive_f
        .iter()
        .filter(|&&(_, r)| r > 0.0)
        .map(|&(f, r)| (f.ln(), r.ln()))
        .collect();
    let dropped = points.len() - logs.len();
    if logs.len() < 2 {
        return Err(StabilityError::InsufficientSpread { decades: 0.0 });
    }
    let lo = logs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = logs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let decades = (hi - lo) / std::f64::consts::LN_10;
    if decades < MIN_DECADES {
        return Err(StabilityError::InsufficientSpread { decades });
    }

    let width = (hi - lo) / n_bins as f64;
    let mut maxima: Vec<Option<(f64, f64)>> = vec![None; n_bins];
    for &(x, y) in &logs {
        let b = (((x - lo) / width).floor() as usize).min(n_bins - 1);
        match maxima[b] {
            Some((_, best)) if best >= y => {}
            _ => maxima[b] = Some((x, y)),
        }
    }
    let pts: Vec<(f64, f64)> = maxima.into_iter().flatten().collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let theta_precap = sxy / sxx;
    if !(theta_precap > 0.0) {
        return Err(StabilityError::NonPositiveExponent { theta_precap });
    }
    let theta = theta_precap.min(1.0);
    let intercept = my - theta * mx;

    let excess = logs
        .iter()
        .map(|&(x, y)| y - theta * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_c = intercept.max(excess - slack);
    Ok(HolderFit {
        theta,
        theta_precap,
        log_c,
        n_bins,
        slack,
        max_violation: excess - log_c,
        records_used: logs.len(),
        dropped,
        constant_r: false,
    })
}

/// `(δ_F, δ_R) = (|p³ − q³|, |p − q|)` over all pairs `p < q` of a uniform grid on `[−1, 1]`.
pub fn cubic_toy_points(grid: usize) -> Vec<(f64, f64)> {
    let xs: Vec<f64> = (0..grid)
        .map(|i| -1.0 + 2.0 * i as f64 / (grid - 1) as f64)
        .collect();
    let mut out = Vec::with_capacity(grid * (grid - 1) / 2);
    for (i, &p) in xs.iter().enumerate() {
        for &q in &xs[i + 1..] {
            out.push(((p.powi(3) - q.powi(3)).abs(), (p - q).abs()));
        }
    }
    out
}
