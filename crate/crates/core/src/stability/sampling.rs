use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conductivity::ConductivityParams;
use crate::elasticity::{ElasticityParams, Mandel};

use super::StabilityError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Conductivity,
    Elasticity,
}

/// Ellipticity class: every cell matrix between `lambda_lo·I` and `lambda_hi·I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactSetSpec {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub n_cells: usize,
    pub kind: ProblemKind,
}

impl CompactSetSpec {
    /// `lambda_lo == lambda_hi` is accepted and yields the single point `lambda·I`.
    pub fn new(
        lambda_lo: f64,
        lambda_hi: f64,
        n_cells: usize,
        kind: ProblemKind,
    ) -> Result<Self, StabilityError> {
        if !(lambda_lo > 0.0 && lambda_lo <= lambda_hi && lambda_hi.is_finite()) {
            return Err(StabilityError::InvalidSpec(format!(
                "need 0 < lambda_lo <= lambda_hi, got [{lambda_lo}, {lambda_hi}]"
            )));
        }
        if n_cells == 0 {
            return Err(StabilityError::InvalidSpec("n_cells must be positive".into()));
        }
        Ok(Self {
            lambda_lo,
            lambda_hi,
            n_cells,
            kind,
        })
    }

    fn eigenvalue(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lambda_lo == self.lambda_hi {
            self.lambda_lo
        } else {
            rng.gen_range(self.lambda_lo..=self.lambda_hi)
        }
    }
}

/// Generator for stream `stream` under `seed`; a pure function of both.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-cell parameter tuples that the stability lab can sample and perturb.
pub trait CellParams: Clone + Send + Sync + Sized {
    const KIND: ProblemKind;

    fn sample(spec: &CompactSetSpec, rng: &mut ChaCha8Rng) -> Self;
    /// Random direction with unit Frobenius norm over the whole tuple.
    fn unit_direction(n_cells: usize, rng: &mut ChaCha8Rng) -> Self;
    fn n_cells(&self) -> usize;
    fn perturbed(&self, t: f64, dir: &Self) -> Self;
    fn cell_distance(&self, other: &Self, cell: usize) -> f64;
    fn is_positive_definite(&self) -> bool;
    fn cell_eig_bounds(&self, cell: usize) -> (f64, f64);
}

impl CellParams for ConductivityParams {
    const KIND: ProblemKind = ProblemKind::Conductivity;

    fn sample(spec: &CompactSetSpec, rng: &mut ChaCha8Rng) -> Self {
        let cells = (0..spec.n_cells)
            .map(|_| {
                let l1 = spec.eigenvalue(rng);
                let l2 = spec.eigenvalue(rng);
                let angle = rng.gen_range(0.0..PI);
                let (s, c) = angle.sin_cos();
                [
                    l1 * c * c + l2 * s * s,
                    l1 * s * s + l2 * c * c,
                    (l1 - l2) * c * s,
                ]
            })
            .collect();
        ConductivityParams::direction(cells)
    }

    fn unit_direction(n_cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let raw = ConductivityParams::direction(
            (0..n_cells)
                .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)))
                .collect(),
        );
        let norm = raw.frobenius_norm();
        raw.scaled(1.0 / norm)
    }

    fn n_cells(&self) -> usize {
        ConductivityParams::n_cells(self)
    }

    fn perturbed(&self, t: f64, dir: &Self) -> Self {
        self.axpy(t, dir)
    }

    fn cell_distance(&self, other: &Self, cell: usize) -> f64 {
        ConductivityParams::cell_distance(self, other, cell)
    }

    fn is_positive_definite(&self) -> bool {
        ConductivityParams::is_positive_definite(self)
    }

    fn cell_eig_bounds(&self, cell: usize) -> (f64, f64) {
        (self.cell_eig_min(cell), self.cell_eig_max(cell))
    }
}

/// Haar-distributed 3×3 orthogonal matrix via Gram–Schmidt on Gaussian columns.
fn random_orthogonal3(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut cols: [[f64; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)));
    for k in 0..3 {
        for prev in 0..k {
            let proj: f64 = (0..3).map(|i| cols[k][i] * cols[prev][i]).sum();
            for i in 0..3 {
                cols[k][i] -= proj * cols[prev][i];
            }
        }
        let norm = (0..3).map(|i| cols[k][i] * cols[k][i]).sum::<f64>().sqrt();
        for i in 0..3 {
            cols[k][i] /= norm;
        }
    }
    cols
}

impl CellParams for ElasticityParams {
    const KIND: ProblemKind = ProblemKind::Elasticity;

    fn sample(spec: &CompactSetSpec, rng: &mut ChaCha8Rng) -> Self {
        let cells = (0..spec.n_cells)
            .map(|_| {
                let eig: [f64; 3] = std::array::from_fn(|_| spec.eigenvalue(rng));
                let q = random_orthogonal3(rng);
                let m: Mandel = std::array::from_fn(|i| {
                    std::array::from_fn(|j| (0..3).map(|k| q[k][i] * eig[k] * q[k][j]).sum())
                });
                m
            })
            .collect();
        ElasticityParams::direction(cells)
    }

    fn unit_direction(n_cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let raw = ElasticityParams::direction(
            (0..n_cells)
                .map(|_| {
                    std::array::from_fn(|_| {
                        std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal))
                    })
                })
                .collect(),
        );
        let norm = raw.frobenius_norm();
        raw.scaled(1.0 / norm)
    }

    fn n_cells(&self) -> usize {
        ElasticityParams::n_cells(self)
    }

    fn perturbed(&self, t: f64, dir: &Self) -> Self {
        self.axpy(t, dir)
    }

    fn cell_distance(&self, other: &Self, cell: usize) -> f64 {
        ElasticityParams::cell_distance(self, other, cell)
    }

    fn is_positive_definite(&self) -> bool {
        ElasticityParams::is_positive_definite(self)
    }

    fn cell_eig_bounds(&self, cell: usize) -> (f64, f64) {
        (self.cell_eig_min(cell), self.cell_eig_max(cell))
    }
}

/// Sample `index` of the class; depends only on `(seed, index)`.
pub fn sample_at<P: CellParams>(spec: &CompactSetSpec, seed: u64, index: u64) -> P {
    P::sample(spec, &mut rng_for(seed, index))
}

pub fn sample_params<P: CellParams>(spec: &CompactSetSpec, count: usize, seed: u64) -> Vec<P> {
    (0..count as u64).map(|i| sample_at(spec, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ProblemKind, lo: f64, hi: f64) -> CompactSetSpec {
        CompactSetSpec::new(lo, hi, 3, kind).unwrap()
    }

    #[test]
    fn deterministic_and_index_addressable() {
        let s = spec(ProblemKind::Conductivity, 0.5, 2.0);
        let a: Vec<ConductivityParams> = sample_params(&s, 8, 42);
        let b: Vec<ConductivityParams> = sample_params(&s, 8, 42);
        assert_eq!(a, b);
        let longer: Vec<ConductivityParams> = sample_params(&s, 12, 42);
        assert_eq!(&longer[..8], &a[..]);
        assert_eq!(sample_at::<ConductivityParams>(&s, 42, 5), a[5]);
        let other: Vec<ConductivityParams> = sample_params(&s, 8, 43);
        assert_ne!(a, other);
    }

    #[test]
    fn eigenvalues_within_class() {
        for kind in [ProblemKind::Conductivity, ProblemKind::Elasticity] {
            let s = spec(kind, 0.5, 2.0);
            for i in 0..50 {
                let bounds: Vec<(f64, f64)> = match kind {
                    ProblemKind::Conductivity => {
                        let p: ConductivityParams = sample_at(&s, 7, i);
                        (0..3).map(|j| p.cell_eig_bounds(j)).collect()
                    }
                    ProblemKind::Elasticity => {
                        let p: ElasticityParams = sample_at(&s, 7, i);
                        (0..3).map(|j| p.cell_eig_bounds(j)).collect()
                    }
                };
                for (lo, hi) in bounds {
                    assert!(lo >= 0.5 - 1e-12 && hi <= 2.0 + 1e-12, "{lo} {hi}");
                }
            }
        }
    }

    #[test]
    fn degenerate_class_is_identity() {
        let s = spec(ProblemKind::Conductivity, 1.0, 1.0);
        for p in sample_params::<ConductivityParams>(&s, 5, 1) {
            for c in p.cells() {
                assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
                assert!(c[2].abs() < 1e-15);
            }
        }
        let s = spec(ProblemKind::Elasticity, 1.0, 1.0);
        for p in sample_params::<ElasticityParams>(&s, 5, 1) {
            for j in 0..3 {
                let c = p.cell(j);
                for a in 0..3 {
                    for b in 0..3 {
                        let e = if a == b { 1.0 } else { 0.0 };
                        assert!((c[a][b] - e).abs() < 1e-14);
                    }
                }
            }
        }
        assert!(CompactSetSpec::new(2.0, 1.0, 1, ProblemKind::Conductivity).is_err());
        assert!(CompactSetSpec::new(0.0, 1.0, 1, ProblemKind::Conductivity).is_err());
    }

    #[test]
    fn unit_directions() {
        let mut rng = rng_for(3, 9);
        let d = ConductivityParams::unit_direction(4, &mut rng);
        assert!((d.frobenius_norm() - 1.0).abs() < 1e-14);
        let e = ElasticityParams::unit_direction(2, &mut rng);
        assert!((e.frobenius_norm() - 1.0).abs() < 1e-14);
    }
}
