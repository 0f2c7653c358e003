//! Local Neumann-to-Dirichlet map for piecewise constant anisotropic conductivities.
//!
//! The discrete map is assembled through its factorization: boundary currents
//! are paired with traces to form load vectors `Tψ`, the Neumann problem is
//! solved on the zero-mean quotient space, and the voltages are paired back
//! with the currents.

use std::sync::Arc;

use rayon::prelude::*;

use crate::mesh::{boundary_mass_matrix, patch_nodes, Mesh, MeshError};
use crate::numerics::{factor_spd, DenseSym, SparseSpd, SpdFactor, TripletBuilder};
use crate::operator::{BasisGram, DataOperator, ForwardError, OperatorKind};

/// Per-cell symmetric 2×2 conductivities stored as `[a11, a22, a12]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityParams {
    cells: Vec<[f64; 3]>,
}

impl ConductivityParams {
    /// Validated constructor: every cell must be positive definite.
    pub fn new(cells: Vec<[f64; 3]>) -> Result<Self, ForwardError> {
        let p = Self { cells };
        for j in 0..p.n_cells() {
            let lo = p.cell_eig_min(j);
            if !(lo > 0.0) {
                return Err(ForwardError::NotPositiveDefinite { cell: j, eig_min: lo });
            }
        }
        Ok(p)
    }

    /// Any symmetric per-cell field, e.g. a perturbation direction.
    pub fn direction(cells: Vec<[f64; 3]>) -> Self {
        Self { cells }
    }

    pub fn isotropic(n_cells: usize, a: f64) -> Result<Self, ForwardError> {
        Self::new(vec![[a, a, 0.0]; n_cells])
    }

    pub fn zeros(n_cells: usize) -> Self {
        Self::direction(vec![[0.0; 3]; n_cells])
    }

    pub fn cells(&self) -> &[[f64; 3]] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_eig_min(&self, j: usize) -> f64 {
        let [a, b, c] = self.cells[j];
        let mean = 0.5 * (a + b);
        let rad = (0.25 * (a - b) * (a - b) + c * c).sqrt();
        mean - rad
    }

    pub fn cell_eig_max(&self, j: usize) -> f64 {
        let [a, b, c] = self.cells[j];
        0.5 * (a + b) + (0.25 * (a - b) * (a - b) + c * c).sqrt()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self::direction(self.cells.iter().map(|c| c.map(|v| t * v)).collect())
    }

    /// `self + t · dir`, unvalidated.
    pub fn axpy(&self, t: f64, dir: &Self) -> Self {
        Self::direction(
            self.cells
                .iter()
                .zip(&dir.cells)
                .map(|(a, d)| [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]])
                .collect(),
        )
    }

    pub fn is_positive_definite(&self) -> bool {
        (0..self.n_cells()).all(|j| self.cell_eig_min(j) > 0.0)
    }

    /// Frobenius norm of the difference of cell `j`'s 2×2 matrices.
    pub fn cell_distance(&self, other: &Self, j: usize) -> f64 {
        let [a, b, c] = self.cells[j];
        let [x, y, z] = other.cells[j];
        ((a - x).powi(2) + (b - y).powi(2) + 2.0 * (c - z).powi(2)).sqrt()
    }

    /// Frobenius norm of the whole tuple.
    pub fn frobenius_norm(&self) -> f64 {
        self.cells
            .iter()
            .map(|[a, b, c]| a * a + b * b + 2.0 * c * c)
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    fn apply(&self, j: usize, g: [f64; 2]) -> [f64; 2] {
        let [a, b, c] = self.cells[j];
        [a * g[0] + c * g[1], c * g[0] + b * g[1]]
    }
}

/// Zero-mean boundary currents supported in the patch.
///
/// Basis current `i` is `φ_i / ∫φ_i − φ_{i+1} / ∫φ_{i+1}` for consecutive
/// patch hat functions, so it integrates to zero.
#[derive(Debug, Clone)]
pub struct CurrentBasis {
    patch_nodes: Vec<usize>,
    hat_integrals: Vec<f64>,
    /// `coefficients[i][a]`: weight of patch hat `a` in current `i`.
    coefficients: Vec<Vec<f64>>,
    mass: DenseSym,
    gram: Arc<BasisGram>,
}

impl CurrentBasis {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn patch_nodes(&self) -> &[usize] {
        &self.patch_nodes
    }

    pub fn hat_integrals(&self) -> &[f64] {
        &self.hat_integrals
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn gram(&self) -> &Arc<BasisGram> {
        &self.gram
    }

    /// Global load vector `Tψ_i`: entry at node `v` is `∫_Σ ψ_i φ_v ds`.
    pub fn load_vector(&self, i: usize, n_nodes: usize) -> Vec<f64> {
        let local = self.mass.matvec(&self.coefficients[i]);
        let mut b = vec![0.0; n_nodes];
        for (a, &v) in self.patch_nodes.iter().enumerate() {
            b[v] = local[a];
        }
        b
    }
}

pub fn current_basis(mesh: &Mesh) -> Result<CurrentBasis, ForwardError> {
    let nodes = patch_nodes(mesh)?;
    if nodes.len() < 2 {
        return Err(MeshError::EmptyPatch.into());
    }
    let mass = boundary_mass_matrix(mesh)?;
    let m = nodes.len();
    let hat_integrals: Vec<f64> = (0..m).map(|a| mass.row(a).iter().sum()).collect();
    let coefficients: Vec<Vec<f64>> = (0..m - 1)
        .map(|i| {
            let mut row = vec![0.0; m];
            row[i] = 1.0 / hat_integrals[i];
            row[i + 1] = -1.0 / hat_integrals[i + 1];
            row
        })
        .collect();
    let k = coefficients.len();
    let flat: Vec<f64> = (0..m)
        .flat_map(|a| coefficients.iter().map(move |row| row[a]))
        .collect();
    let gram = BasisGram::new(mass.congruence(&flat, k))?;
    Ok(CurrentBasis {
        patch_nodes: nodes,
        hat_integrals,
        coefficients,
        mass,
        gram: Arc::new(gram),
    })
}

/// Neumann stiffness matrix with the data needed to fix the additive constant.
#[derive(Debug, Clone)]
pub struct NeumannSystem {
    stiffness: SparseSpd,
    /// `∫_Ω φ_v dx` for each node; `Σ_v mean_weights[v] u_v = ∫_Ω u`.
    mean_weights: Vec<f64>,
}

/// Factorization of the Neumann problem on the zero-mean quotient space.
///
/// One node is held at zero to make the reduced stiffness definite and the
/// solution is then shifted to zero mean. For loads with zero total this
/// reproduces the mean-constrained solution exactly.
#[derive(Debug, Clone)]
pub struct NeumannFactor {
    factor: SpdFactor,
    grounded: usize,
    mean_weights: Vec<f64>,
}

impl NeumannSystem {
    pub fn stiffness(&self) -> &SparseSpd {
        &self.stiffness
    }

    pub fn mean_weights(&self) -> &[f64] {
        &self.mean_weights
    }

    pub fn factor(&self) -> Result<NeumannFactor, ForwardError> {
        let n = self.stiffness.dim();
        let grounded = n - 1;
        let keep: Vec<usize> = (0..grounded).collect();
        let factor = factor_spd(&self.stiffness.principal_submatrix(&keep))?;
        Ok(NeumannFactor {
            factor,
            grounded,
            mean_weights: self.mean_weights.clone(),
        })
    }
}

impl NeumannFactor {
    /// Zero-mean solution of `K u = b`; `b` must sum to zero.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, ForwardError> {
        let reduced = self.factor.solve(&b[..self.grounded])?;
        let mut u = reduced;
        u.push(0.0);
        let total: f64 = self.mean_weights.iter().sum();
        let mean = self
            .mean_weights
            .iter()
            .zip(&u)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            / total;
        u.iter_mut().for_each(|v| *v -= mean);
        Ok(u)
    }
}

fn check_cells(mesh: &Mesh, n: usize) -> Result<(), ForwardError> {
    if n != mesh.n_cells() {
        return Err(ForwardError::CellCountMismatch {
            expected: mesh.n_cells(),
            found: n,
        });
    }
    Ok(())
}

/// P1 stiffness `∫ σ_A ∇φ_a · ∇φ_b` over all nodes.
pub fn assemble_stiffness(mesh: &Mesh, p: &ConductivityParams) -> Result<NeumannSystem, ForwardError> {
    check_cells(mesh, p.n_cells())?;
    let n = mesh.n_nodes();
    let mut builder = TripletBuilder::new(n);
    let mut mean_weights = vec![0.0; n];
    for t in mesh.triangles() {
        let (grads, area) = mesh.hat_gradients(t);
        for a in 0..3 {
            mean_weights[t.nodes[a]] += area / 3.0;
            let sg = p.apply(t.cell, grads[a]);
            for b in 0..3 {
                let v = area * (sg[0] * grads[b][0] + sg[1] * grads[b][1]);
                builder.add(t.nodes[a], t.nodes[b], v);
            }
        }
    }
    Ok(NeumannSystem {
        stiffness: builder.build(),
        mean_weights,
    })
}

/// Forward solution for every basis current, kept for derivative evaluation.
#[derive(Debug, Clone)]
pub struct NdSolution {
    pub operator: DataOperator,
    /// Zero-mean nodal potentials `u_i`, one per basis current.
    pub potentials: Vec<Vec<f64>>,
    /// Pairings `(Tψ_j)·u_i` before symmetrization, row-major.
    pub raw_pairings: Vec<f64>,
}

pub fn nd_solve(
    mesh: &Mesh,
    p: &ConductivityParams,
    basis: &CurrentBasis,
) -> Result<NdSolution, ForwardError> {
    let system = assemble_stiffness(mesh, p)?;
    let factor = system.factor()?;
    let n = mesh.n_nodes();
    let k = basis.dim();
    let loads: Vec<Vec<f64>> = (0..k).map(|i| basis.load_vector(i, n)).collect();
    let potentials = loads
        .par_iter()
        .map(|b| factor.solve(b))
        .collect::<Result<Vec<_>, _>>()?;
    let mut raw = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            raw[i * k + j] = dot(&loads[j], &potentials[i]);
        }
    }
    let matrix = DenseSym::from_row_major(k, raw.clone())?;
    let operator = DataOperator::new(matrix, basis.gram().clone(), OperatorKind::ConductivityNd)?;
    Ok(NdSolution {
        operator,
        potentials,
        raw_pairings: raw,
    })
}

/// `M[i][j] = ⟨𝒩_A ψ_i, ψ_j⟩`.
pub fn nd_matrix(
    mesh: &Mesh,
    p: &ConductivityParams,
    basis: &CurrentBasis,
) -> Result<DataOperator, ForwardError> {
    Ok(nd_solve(mesh, p, basis)?.operator)
}

/// Directional derivative `d[i][j] = −∫ σ_dp ∇u_i · ∇u_j`.
pub fn nd_derivative(
    mesh: &Mesh,
    p: &ConductivityParams,
    dp: &ConductivityParams,
    basis: &CurrentBasis,
) -> Result<DenseSym, ForwardError> {
    check_cells(mesh, dp.n_cells())?;
    let sol = nd_solve(mesh, p, basis)?;
    Ok(energy_pairing(mesh, dp, &sol.potentials).scaled(-1.0))
}

/// `∫ σ ∇u_i · ∇u_j` for a family of nodal fields.
pub fn energy_pairing(mesh: &Mesh, sigma: &ConductivityParams, fields: &[Vec<f64>]) -> DenseSym {
    let k = fields.len();
    let mut raw = vec![0.0; k * k];
    let mut grads_u = vec![[0.0; 2]; k];
    for t in mesh.triangles() {
        let (grads, area) = mesh.hat_gradients(t);
        for (i, u) in fields.iter().enumerate() {
            let mut g = [0.0; 2];
            for a in 0..3 {
                let ua = u[t.nodes[a]];
                g[0] += ua * grads[a][0];
                g[1] += ua * grads[a][1];
            }
            grads_u[i] = g;
        }
        for i in 0..k {
            let sg = sigma.apply(t.cell, grads_u[i]);
            for j in 0..k {
                raw[i * k + j] += area * (sg[0] * grads_u[j][0] + sg[1] * grads_u[j][1]);
            }
        }
    }
    DenseSym::from_row_major(k, raw).expect("square by construction")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, PartitionSpec, PatchSpec, Side};
    use crate::numerics::{eig_min, spectral_norm};
    use crate::operator::operator_distance;

    fn mesh(n: usize, cols: usize, rows: usize) -> Mesh {
        build_mesh(n, PartitionSpec::new(cols, rows).unwrap(), PatchSpec::full(Side::Bottom)).unwrap()
    }

    fn rel_max_diff(a: &DenseSym, b: &DenseSym) -> f64 {
        a.sub(b).unwrap().max_abs() / a.max_abs().max(b.max_abs())
    }

    fn params_2cell() -> ConductivityParams {
        ConductivityParams::new(vec![[1.3, 0.7, 0.2], [0.6, 1.8, -0.3]]).unwrap()
    }

    #[test]
    fn basis_dimensions_and_zero_mean() {
        let m = mesh(4, 1, 1);
        let b = current_basis(&m).unwrap();
        assert_eq!(b.dim(), 4);
        for row in b.coefficients() {
            let total: f64 = row.iter().zip(b.hat_integrals()).map(|(c, w)| c * w).sum();
            assert!(total.abs() < 1e-14);
        }
        let m1 = mesh(1, 1, 1);
        assert_eq!(current_basis(&m1).unwrap().dim(), 1);
        assert!(eig_min(b.gram().matrix()) > 0.0);
        // Load vectors carry zero total current and live on the patch.
        let load = b.load_vector(2, m.n_nodes());
        assert!(load.iter().sum::<f64>().abs() < 1e-14);
        assert!(load.iter().skip(5).all(|&v| v == 0.0));
    }

    #[test]
    fn stiffness_kernel_and_linearity() {
        let m = mesh(4, 2, 2);
        let one = ConductivityParams::isotropic(4, 1.0).unwrap();
        let two = ConductivityParams::isotropic(4, 2.0).unwrap();
        let k1 = assemble_stiffness(&m, &one).unwrap();
        let k2 = assemble_stiffness(&m, &two).unwrap();
        for i in 0..m.n_nodes() {
            let s: f64 = k1.stiffness().row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-14);
            for (j, v) in k1.stiffness().row(i) {
                assert_eq!(k2.stiffness().get(i, j), 2.0 * v);
            }
        }
        assert!((k1.mean_weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let wrong = ConductivityParams::isotropic(3, 1.0).unwrap();
        assert!(matches!(
            assemble_stiffness(&m, &wrong),
            Err(ForwardError::CellCountMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn anisotropic_energy_of_linear_fields() {
        let m = mesh(4, 1, 1);
        let p = ConductivityParams::new(vec![[1.0, 4.0, 0.0]]).unwrap();
        let k = assemble_stiffness(&m, &p).unwrap();
        let ux: Vec<f64> = m.nodes().iter().map(|n| n[0]).collect();
        let uy: Vec<f64> = m.nodes().iter().map(|n| n[1]).collect();
        let ex = k.stiffness().quad_form(&ux);
        let ey = k.stiffness().quad_form(&uy);
        assert!((ex - 1.0).abs() < 1e-13);
        assert!((ey - 4.0 * ex).abs() < 1e-13);
    }

    #[test]
    fn neumann_solution_satisfies_system() {
        let m = mesh(8, 2, 1);
        let p = params_2cell();
        let sys = assemble_stiffness(&m, &p).unwrap();
        let f = sys.factor().unwrap();
        let b = current_basis(&m).unwrap().load_vector(3, m.n_nodes());
        let u = f.solve(&b).unwrap();
        let r: Vec<f64> = sys.stiffness().matvec(&u).iter().zip(&b).map(|(x, y)| x - y).collect();
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn <= 1e-12 * bn);
        let mean: f64 = sys.mean_weights().iter().zip(&u).map(|(w, v)| w * v).sum();
        assert!(mean.abs() < 1e-14);
    }

    #[test]
    fn raw_pairings_nearly_symmetric_and_psd() {
        let m = mesh(8, 2, 1);
        let basis = current_basis(&m).unwrap();
        let sol = nd_solve(&m, &params_2cell(), &basis).unwrap();
        let k = basis.dim();
        let scale = sol.operator.matrix().max_abs();
        for i in 0..k {
            for j in 0..k {
                let d = (sol.raw_pairings[i * k + j] - sol.raw_pairings[j * k + i]).abs();
                assert!(d <= 1e-12 * scale);
            }
        }
        let mat = sol.operator.matrix();
        assert!(eig_min(mat) >= -1e-10 * spectral_norm(mat));
        for i in 0..k {
            assert!(mat.get(i, i) > 0.0);
        }
    }

    #[test]
    fn scaling_identities() {
        let m = mesh(4, 2, 1);
        let basis = current_basis(&m).unwrap();
        let p = params_2cell();
        let base = nd_matrix(&m, &p, &basis).unwrap();
        for t in [0.5, 2.0, 10.0] {
            let scaled = nd_matrix(&m, &p.scaled(t), &basis).unwrap();
            assert!(rel_max_diff(scaled.matrix(), &base.matrix().scaled(1.0 / t)) < 1e-12);
        }
        // One-cell isotropic conductivity recovered from a quadratic form.
        let m1 = mesh(4, 1, 1);
        let b1 = current_basis(&m1).unwrap();
        let id = nd_matrix(&m1, &ConductivityParams::isotropic(1, 1.0).unwrap(), &b1).unwrap();
        let a = nd_matrix(&m1, &ConductivityParams::isotropic(1, 3.7).unwrap(), &b1).unwrap();
        let psi = [0.3, -1.0, 0.5, 2.0];
        let ratio = id.matrix().quad_form(&psi) / a.matrix().quad_form(&psi);
        assert!((ratio - 3.7).abs() < 1e-12 * 3.7);

        let dist = operator_distance(&base, &nd_matrix(&m, &p.scaled(2.0), &basis).unwrap()).unwrap();
        let norm = spectral_norm(&basis.gram().whiten(base.matrix()));
        assert!((dist - 0.5 * norm).abs() < 1e-12 * norm);
    }

    #[test]
    fn radial_and_zero_derivatives() {
        let m = mesh(4, 2, 1);
        let basis = current_basis(&m).unwrap();
        let p = params_2cell();
        let d = nd_derivative(&m, &p, &p, &basis).unwrap();
        let n = nd_matrix(&m, &p, &basis).unwrap();
        assert!(d.add(n.matrix()).unwrap().max_abs() <= 1e-10 * n.matrix().max_abs());
        let z = nd_derivative(&m, &p, &ConductivityParams::zeros(2), &basis).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn loewner_monotone_quadratic_forms() {
        let m = mesh(4, 2, 1);
        let basis = current_basis(&m).unwrap();
        let small = params_2cell();
        // Adding a PSD perturbation per cell raises the conductivity.
        let bigger = small.axpy(1.0, &ConductivityParams::direction(vec![[0.5, 0.1, 0.2], [0.0, 0.3, 0.0]]));
        let ms = nd_matrix(&m, &small, &basis).unwrap();
        let mb = nd_matrix(&m, &bigger, &basis).unwrap();
        for i in 0..basis.dim() {
            assert!(mb.matrix().get(i, i) <= ms.matrix().get(i, i));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(matches!(
            ConductivityParams::new(vec![[1.0, 1.0, 2.0]]),
            Err(ForwardError::NotPositiveDefinite { cell: 0, .. })
        ));
        let p = ConductivityParams::new(vec![[2.0, 1.0, 0.5]]).unwrap();
        let lo = p.cell_eig_min(0);
        let hi = p.cell_eig_max(0);
        assert!((lo * hi - 1.75).abs() < 1e-14 && (lo + hi - 3.0).abs() < 1e-14);
    }
}
