//! Hilbert–Schmidt scalarization of operator differences and finite sets of
//! scalar matrix-element measurements.
//!
//! Probes act diagonally with weights `2^{-j}` in the Gram-orthonormalized
//! basis, so `Φ(a, b) = ‖W D W‖²_HS` where `D` is the whitened difference
//! `G^{-1/2}(M_a − M_b)G^{-1/2}` and `W = diag(w)`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::operator::{operator_distance, DataOperator, ForwardError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalarError {
    #[error("truncation order must be at least 1")]
    EmptyTruncation,
    #[error("truncation order {k} exceeds basis dimension {dim}")]
    TruncationTooLarge { k: usize, dim: usize },
    #[error("index ({i}, {j}) out of range for dimension {dim}")]
    IndexOutOfRange { i: usize, j: usize, dim: usize },
    #[error("duplicate measurement pair ({0}, {1})")]
    DuplicatePair(usize, usize),
    #[error("sample {index} has zero operator distance")]
    DegenerateSample { index: usize },
    #[error("no samples given")]
    NoSamples,
    #[error("target ratio {0} outside (0, 1]")]
    InvalidTarget(f64),
    #[error("malformed measurement line {line}: {text:?}")]
    Parse { line: usize, text: String },
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

/// Weights `(2^{-1}, …, 2^{-k})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWeights {
    weights: Vec<f64>,
}

impl ProbeWeights {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ w_j² = (1 − 4^{-k}) / 3`, the squared HS norm of the probe.
    pub fn sum_squares(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

pub fn probe_weights(k: usize) -> Result<ProbeWeights, ScalarError> {
    if k == 0 {
        return Err(ScalarError::EmptyTruncation);
    }
    Ok(ProbeWeights {
        weights: (1..=k).map(|j| 0.5_f64.powi(j as i32)).collect(),
    })
}

/// `Φ(a, b) = Σ_{i,j<k} w_i² w_j² D_ij²` on the leading `k` whitened directions.
pub fn phi(a: &DataOperator, b: &DataOperator, w: &ProbeWeights) -> Result<f64, ScalarError> {
    let d = a.whitened_difference(b)?;
    if w.k() > d.dim() {
        return Err(ScalarError::TruncationTooLarge {
            k: w.k(),
            dim: d.dim(),
        });
    }
    let ws = w.weights();
    let mut total = 0.0;
    for i in 0..w.k() {
        for j in 0..w.k() {
            let v = ws[i] * ws[j] * d.get(i, j);
            total += v * v;
        }
    }
    Ok(total)
}

/// Duality pairing `⟨F b_i, b_j⟩` in basis coordinates.
pub fn matrix_element(a: &DataOperator, i: usize, j: usize) -> Result<f64, ScalarError> {
    let dim = a.dim();
    if i >= dim || j >= dim {
        return Err(ScalarError::IndexOutOfRange { i, j, dim });
    }
    Ok(a.matrix().get(i, j))
}

/// Distinct index pairs into the boundary basis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MeasurementSet {
    pairs: Vec<(usize, usize)>,
}

impl MeasurementSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, ScalarError> {
        let mut seen = HashSet::new();
        for &(i, j) in &pairs {
            if !seen.insert((i, j)) {
                return Err(ScalarError::DuplicatePair(i, j));
            }
        }
        Ok(Self { pairs })
    }

    /// All `(i, j)` with `i ≤ j < dim`, row by row.
    pub fn upper_pairs(dim: usize) -> Self {
        Self {
            pairs: (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect(),
        }
    }

    /// All ordered pairs `(i, j)` with `i, j < dim`.
    pub fn all_pairs(dim: usize) -> Self {
        Self {
            pairs: (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check_dim(&self, dim: usize) -> Result<(), ScalarError> {
        match self.pairs.iter().find(|&&(i, j)| i >= dim || j >= dim) {
            Some(&(i, j)) => Err(ScalarError::IndexOutOfRange { i, j, dim }),
            None => Ok(()),
        }
    }

    /// One `i,j` line per pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, j) in &self.pairs {
            let _ = writeln!(out, "{i},{j}");
        }
        out
    }

    /// Parses `i,j` lines; blank lines and `#` comments are skipped.
    pub fn from_csv(text: &str) -> Result<Self, ScalarError> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = || ScalarError::Parse {
                line: n + 1,
                text: line.to_string(),
            };
            let (i, j) = trimmed.split_once(',').ok_or_else(bad)?;
            let i = i.trim().parse().map_err(|_| bad())?;
            let j = j.trim().parse().map_err(|_| bad())?;
            pairs.push((i, j));
        }
        Self::new(pairs)
    }
}

/// Finite measurement map `p ↦ (m_{i_ℓ j_ℓ}(p))_ℓ` sampled from one operator.
#[derive(Debug, Clone)]
pub struct FiniteMap<'a> {
    set: &'a MeasurementSet,
    operator: &'a DataOperator,
}

impl<'a> FiniteMap<'a> {
    pub fn new(set: &'a MeasurementSet, operator: &'a DataOperator) -> Result<Self, ScalarError> {
        set.check_dim(operator.dim())?;
        Ok(Self { set, operator })
    }

    pub fn evaluate(&self) -> Vec<f64> {
        self.set
            .pairs()
            .iter()
            .map(|&(i, j)| self.operator.matrix().get(i, j))
            .collect()
    }
}

/// Euclidean distance between the finite measurement vectors of `a` and `b`.
pub fn finite_distance(
    set: &MeasurementSet,
    a: &DataOperator,
    b: &DataOperator,
) -> Result<f64, ScalarError> {
    if !a.same_basis(b) {
        return Err(ForwardError::BasisMismatch.into());
    }
    let ea = FiniteMap::new(set, a)?.evaluate();
    let eb = FiniteMap::new(set, b)?.evaluate();
    Ok(ea
        .iter()
        .zip(&eb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Outcome of greedy measurement selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub set: MeasurementSet,
    /// Minimum over samples of `finite_distance / operator_distance`.
    pub ratio: f64,
    /// Ratio after each addition; non-decreasing.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("target ratio not reached with {} measurements (achieved {:.4})", .0.set.len(), .0.ratio)]
    CannotReachRatio(Selection),
    #[error(transparent)]
    Invalid(#[from] ScalarError),
}

/// Greedy worst-case selection of scalar measurements.
///
/// Each step adds the candidate pair that maximizes the minimum over samples
/// of `finite_distance / operator_distance`; ties go to the lowest candidate
/// index. Stops once the minimum ratio reaches `target_ratio` or `max_size`
/// pairs are chosen.
pub fn greedy_select(
    samples: &[(DataOperator, DataOperator)],
    candidates: &[(usize, usize)],
    target_ratio: f64,
    max_size: usize,
) -> Result<Selection, SelectError> {
    if samples.is_empty() {
        return Err(ScalarError::NoSamples.into());
    }
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(ScalarError::InvalidTarget(target_ratio).into());
    }
    let dim = samples[0].0.dim();
    MeasurementSet::new(candidates.to_vec())?.check_dim(dim)?;

    let mut inv_dist = Vec::with_capacity(samples.len());
    // diffs[s][c] = (M_a − M_b)[i_c][j_c]
    let mut diffs = Vec::with_capacity(samples.len());
    for (index, (a, b)) in samples.iter().enumerate() {
        let d = operator_distance(a, b).map_err(ScalarError::from)?;
        if !(d > 0.0) {
            return Err(ScalarError::DegenerateSample { index }.into());
        }
        inv_dist.push(1.0 / d);
        diffs.push(
            candidates
                .iter()
                .map(|&(i, j)| a.matrix().get(i, j) - b.matrix().get(i, j))
                .collect::<Vec<f64>>(),
        );
    }

    let mut sums = vec![0.0_f64; samples.len()];
    let mut used = vec![false; candidates.len()];
    let mut chosen = Vec::new();
    let mut history = Vec::new();
    let mut ratio = 0.0;

    while ratio < target_ratio && chosen.len() < max_size {
        let scores: Vec<Option<f64>> = (0..candidates.len())
            .into_par_iter()
            .map(|c| {
                if used[c] {
                    return None;
                }
                Some(
                    sums.iter()
                        .zip(&diffs)
                        .zip(&inv_dist)
                        .map(|((s, d), inv)| (s + d[c] * d[c]).sqrt() * inv)
                        .fold(f64::INFINITY, f64::min),
                )
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (c, score) in scores.into_iter().enumerate() {
            if let Some(score) = score {
                if best.map_or(true, |(_, b)| score > b) {
                    best = Some((c, score));
                }
            }
        }
        let Some((c, score)) = best else { break };
        used[c] = true;
        chosen.push(candidates[c]);
        for (s, d) in sums.iter_mut().zip(&diffs) {
            *s += d[c] * d[c];
        }
        ratio = score;
        history.push(score);
    }

    let selection = Selection {
        set: MeasurementSet { pairs: chosen },
        ratio,
        history,
    };
    if ratio >= target_ratio {
        Ok(selection)
    } else {
        Err(SelectError::CannotReachRatio(selection))
    }
}
