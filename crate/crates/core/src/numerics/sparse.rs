use std::collections::VecDeque;

use super::NumericsError;

/// Symmetric sparse matrix in compressed-row form, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed and the
/// result is the symmetric part `(A + A^T) / 2` of the accumulated matrix.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    /// Compresses and symmetrizes. Contributions to each unordered position are
    /// summed in insertion order, so the result is deterministic and exactly symmetric.
    pub fn build(self) -> SparseSpd {
        let n = self.n;
        let mut upper: Vec<(usize, usize, f64)> = self
            .entries
            .into_iter()
            .map(|(r, c, v)| (r.min(c), r.max(c), v))
            .collect();
        upper.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        for (r, c, v) in upper {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * merged.len());
        for (r, c, v) in merged {
            if r == c {
                full.push((r, c, v));
            } else {
                full.push((r, c, 0.5 * v));
                full.push((c, r, 0.5 * v));
            }
        }
        full.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(full.len());
        let mut values = Vec::with_capacity(full.len());
        for (r, c, v) in full {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSpd {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseSpd {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut b = TripletBuilder::new(n);
        for &(r, c, v) in triplets {
            b.add(r, c, v);
        }
        b.build()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut b = TripletBuilder::new(n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i` in ascending column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension");
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut b = TripletBuilder::new(keep.len());
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (old_j, v) in self.row(old_i) {
                let new_j = map[old_j];
                if new_j != usize::MAX {
                    b.add(new_i, new_j, v);
                }
            }
        }
        b.build()
    }

    fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }
}

/// Envelope Cholesky factor `P A P^T = L L^T` under a reverse Cuthill–McKee ordering.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First stored column of each row of `L` (in permuted indices).
    first: Vec<usize>,
    row_start: Vec<usize>,
    /// Row `i` of `L` holds columns `first[i]..=i`.
    data: Vec<f64>,
}

/// Reverse Cuthill–McKee ordering, starting each component from a minimum-degree node.
pub fn rcm_ordering(m: &SparseSpd) -> Vec<usize> {
    let n = m.dim();
    let degree: Vec<usize> = (0..n).map(|i| m.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = m
                .row(v)
                .map(|(j, _)| j)
                .filter(|&j| j != v && !visited[j])
                .collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factorization of a symmetric positive definite sparse matrix.
pub fn factor_spd(m: &SparseSpd) -> Result<SpdFactor, NumericsError> {
    if !m.is_structurally_symmetric() {
        return Err(NumericsError::NotSymmetric);
    }
    let n = m.dim();
    let perm = rcm_ordering(m);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }

    let mut first = vec![0usize; n];
    for (new_i, &old_i) in perm.iter().enumerate() {
        first[new_i] = m
            .row(old_i)
            .map(|(j, _)| inv[j])
            .filter(|&j| j <= new_i)
            .min()
            .unwrap_or(new_i);
    }
    let mut row_start = vec![0usize; n + 1];
    for i in 0..n {
        row_start[i + 1] = row_start[i] + (i - first[i] + 1);
    }
    let mut data = vec![0.0; row_start[n]];
    for (new_i, &old_i) in perm.iter().enumerate() {
        for (old_j, v) in m.row(old_i) {
            let new_j = inv[old_j];
            if new_j <= new_i {
                data[row_start[new_i] + new_j - first[new_i]] = v;
            }
        }
    }

    for i in 0..n {
        let fi = first[i];
        let base_i = row_start[i];
        for j in fi..i {
            let fj = first[j];
            let base_j = row_start[j];
            let lo = fi.max(fj);
            let mut s = data[base_i + j - fi];
            for k in lo..j {
                s -= data[base_i + k - fi] * data[base_j + k - fj];
            }
            data[base_i + j - fi] = s / data[base_j + j - fj];
        }
        let mut d = data[base_i + i - fi];
        for k in fi..i {
            let l = data[base_i + k - fi];
            d -= l * l;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(NumericsError::NotPositiveDefinite {
                pivot: perm[i],
                value: d,
            });
        }
        data[base_i + i - fi] = d.sqrt();
    }

    Ok(SpdFactor {
        n,
        perm,
        first,
        row_start,
        data,
    })
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal of `L`, reported against the original (unpermuted) indices.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            out[self.perm[i]] = self.data[self.row_start[i] + i - self.first[i]];
        }
        out
    }

    /// Stored entries of the factor (envelope size).
    pub fn envelope_len(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if b.len() != self.n {
            return Err(NumericsError::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // L y = Pb
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.row_start[i]..self.row_start[i + 1]];
            let mut s = y[i];
            for k in fi..i {
                s -= row[k - fi] * y[k];
            }
            y[i] = s / row[i - fi];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.row_start[i]..self.row_start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

/// Applies a factorization to one right-hand side.
pub fn solve(f: &SpdFactor, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    f.solve(b)
}
