use std::fmt;

use super::NumericsError;

/// Dense symmetric matrix stored row-major.
///
/// Every constructor symmetrizes its input, so `get(i, j) == get(j, i)` holds
/// bit-for-bit.
#[derive(Clone, PartialEq)]
pub struct DenseSym {
    n: usize,
    data: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds from a generator; entry (i, j) is the average of `f(i, j)` and `f(j, i)`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut raw = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                raw[i * n + j] = f(i, j);
            }
        }
        Self::symmetrized(n, raw)
    }

    /// Builds from row-major data of length `n * n`, averaging with the transpose.
    pub fn from_row_major(n: usize, raw: Vec<f64>) -> Result<Self, NumericsError> {
        if raw.len() != n * n {
            return Err(NumericsError::DimensionMismatch {
                expected: n * n,
                found: raw.len(),
            });
        }
        Ok(Self::symmetrized(n, raw))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let n = rows.len();
        let mut raw = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(NumericsError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            raw.extend_from_slice(row);
        }
        Ok(Self::symmetrized(n, raw))
    }

    fn symmetrized(n: usize, mut raw: Vec<f64>) -> Self {
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (raw[i * n + j] + raw[j * n + i]);
                raw[i * n + j] = avg;
                raw[j * n + i] = avg;
            }
        }
        Self { n, data: raw }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| s * v).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, NumericsError> {
        if self.n != other.n {
            return Err(NumericsError::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "matvec dimension");
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.matvec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `B^T A B` for a row-major `n × m` matrix `B`, returning an `m × m` matrix.
    pub fn congruence(&self, b: &[f64], m: usize) -> Self {
        let n = self.n;
        assert_eq!(b.len(), n * m, "congruence dimension");
        // ab = A * B  (n × m)
        let mut ab = vec![0.0; n * m];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..m {
                    ab[i * m + j] += a * b[k * m + j];
                }
            }
        }
        Self::from_fn(m, |p, q| (0..n).map(|i| b[i * m + p] * ab[i * m + q]).sum())
    }

    /// Leading principal `k × k` block.
    pub fn leading_block(&self, k: usize) -> Self {
        let k = k.min(self.n);
        Self::from_fn(k, |i, j| self.get(i, j))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Full symmetric eigendecomposition by cyclic Jacobi rotations.
    pub fn eigen(&self) -> SymEigen {
        jacobi_eigen(self)
    }

    /// `A^s` for symmetric positive definite `A` via its eigendecomposition.
    pub fn spd_power(&self, s: f64) -> Result<Self, NumericsError> {
        let eig = self.eigen();
        let scale = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if let Some((idx, &v)) = eig
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| v <= 1e-14 * scale || v <= 0.0)
        {
            return Err(NumericsError::NotPositiveDefinite { pivot: idx, value: v });
        }
        let n = self.n;
        let powered: Vec<f64> = eig.values.iter().map(|v| v.powf(s)).collect();
        Ok(Self::from_fn(n, |i, j| {
            (0..n)
                .map(|k| eig.vectors[k][i] * powered[k] * eig.vectors[k][j])
                .sum()
        }))
    }
}

impl fmt::Debug for DenseSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries((0..self.n).map(|i| self.row(i)))
            .finish()
    }
}

/// Eigenvalues in ascending order with matching unit eigenvectors.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

const JACOBI_MAX_SWEEPS: usize = 100;

fn jacobi_eigen(m: &DenseSym) -> SymEigen {
    let n = m.n;
    let mut a = m.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= f64::EPSILON * f64::EPSILON * total * 1e-4 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                if apq.abs() <= 1e-3 * f64::EPSILON * (app.abs() + aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    SymEigen {
        values: order.iter().map(|&i| a[i * n + i]).collect(),
        vectors: order
            .iter()
            .map(|&col| (0..n).map(|row| v[row * n + col]).collect())
            .collect(),
    }
}

/// Largest absolute eigenvalue, i.e. the operator 2-norm of a symmetric matrix.
pub fn spectral_norm(m: &DenseSym) -> f64 {
    if m.dim() == 0 {
        return 0.0;
    }
    m.eigen()
        .values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue.
pub fn eig_min(m: &DenseSym) -> f64 {
    m.eigen().values.first().copied().unwrap_or(f64::NAN)
}
