//! Localized Dirichlet-to-Neumann map for piecewise homogeneous anisotropic
//! plane-strain elasticity.
//!
//! Tensors are 3×3 symmetric matrices acting on Mandel strain vectors
//! `(ε11, ε22, √2 ε12)`. The discrete map is assembled as
//! `Λ = Q − P♯ L⁻¹ P` with a fixed lift `E` of boundary displacements and a
//! zero-Dirichlet correction.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use rayon::prelude::*;

use crate::mesh::{boundary_mass_matrix, patch_nodes, Mesh, Triangle};
use crate::numerics::{eig_min, factor_spd, DenseSym, SparseSpd, TripletBuilder};
use crate::operator::{BasisGram, DataOperator, ForwardError, OperatorKind};

pub type Mandel = [[f64; 3]; 3];

/// Per-cell elasticity tensors in Mandel form, stored as the upper triangle
/// `[c00, c01, c02, c11, c12, c22]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityParams {
    cells: Vec<[f64; 6]>,
}

fn pack(m: &Mandel) -> [f64; 6] {
    [m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]]
}

fn unpack(c: &[f64; 6]) -> Mandel {
    [[c[0], c[1], c[2]], [c[1], c[3], c[4]], [c[2], c[4], c[5]]]
}

impl ElasticityParams {
    /// Validated constructor: every cell tensor must be strongly convex.
    pub fn new(cells: Vec<Mandel>) -> Result<Self, ForwardError> {
        let p = Self::direction(cells);
        for j in 0..p.n_cells() {
            let lo = p.cell_eig_min(j);
            if !(lo > 0.0) {
                return Err(ForwardError::NotPositiveDefinite { cell: j, eig_min: lo });
            }
        }
        Ok(p)
    }

    /// Any symmetric per-cell field (symmetrized), e.g. a perturbation direction.
    pub fn direction(cells: Vec<Mandel>) -> Self {
        Self {
            cells: cells
                .iter()
                .map(|m| {
                    let s = DenseSym::from_fn(3, |i, j| m[i][j]);
                    pack(&std::array::from_fn(|i| std::array::from_fn(|j| s.get(i, j))))
                })
                .collect(),
        }
    }

    pub fn uniform(n_cells: usize, tensor: Mandel) -> Result<Self, ForwardError> {
        Self::new(vec![tensor; n_cells])
    }

    pub fn zeros(n_cells: usize) -> Self {
        Self {
            cells: vec![[0.0; 6]; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, j: usize) -> Mandel {
        unpack(&self.cells[j])
    }

    pub fn cell_eig_min(&self, j: usize) -> f64 {
        eig_min(&self.cell_dense(j))
    }

    pub fn cell_eig_max(&self, j: usize) -> f64 {
        self.cell_dense(j).eigen().values[2]
    }

    fn cell_dense(&self, j: usize) -> DenseSym {
        let c = self.cell(j);
        DenseSym::from_fn(3, |a, b| c[a][b])
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            cells: self.cells.iter().map(|c| c.map(|v| t * v)).collect(),
        }
    }

    pub fn axpy(&self, t: f64, dir: &Self) -> Self {
        Self {
            cells: self
                .cells
                .iter()
                .zip(&dir.cells)
                .map(|(a, d)| std::array::from_fn(|i| a[i] + t * d[i]))
                .collect(),
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        (0..self.n_cells()).all(|j| self.cell_eig_min(j) > 0.0)
    }

    /// Frobenius distance between the Mandel matrices of cell `j`.
    pub fn cell_distance(&self, other: &Self, j: usize) -> f64 {
        let d: [f64; 6] = std::array::from_fn(|i| self.cells[j][i] - other.cells[j][i]);
        frobenius_packed(&d)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| frobenius_packed(c).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    fn apply(&self, j: usize, e: [f64; 3]) -> [f64; 3] {
        let c = &self.cells[j];
        [
            c[0] * e[0] + c[1] * e[1] + c[2] * e[2],
            c[1] * e[0] + c[3] * e[1] + c[4] * e[2],
            c[2] * e[0] + c[4] * e[1] + c[5] * e[2],
        ]
    }
}

fn frobenius_packed(c: &[f64; 6]) -> f64 {
    (c[0] * c[0] + c[3] * c[3] + c[5] * c[5] + 2.0 * (c[1] * c[1] + c[2] * c[2] + c[4] * c[4])).sqrt()
}

/// Isotropic plane-strain tensor with Lamé parameters `λ`, `μ` in Mandel form.
pub fn isotropic_tensor(lambda_lame: f64, mu: f64) -> Result<Mandel, ForwardError> {
    // Eigenvalues are 2(λ + μ), 2μ, 2μ.
    if !(mu > 0.0 && lambda_lame + mu > 0.0) {
        return Err(ForwardError::NotPositiveDefinite {
            cell: 0,
            eig_min: 2.0 * mu.min(lambda_lame + mu),
        });
    }
    let d = lambda_lame + 2.0 * mu;
    Ok([[d, lambda_lame, 0.0], [lambda_lame, d, 0.0], [0.0, 0.0, 2.0 * mu]])
}

/// Symmetric 2×2 strain or stress to its Mandel vector.
pub fn to_mandel(e: [[f64; 2]; 2]) -> [f64; 3] {
    [e[0][0], e[1][1], SQRT_2 * 0.5 * (e[0][1] + e[1][0])]
}

pub fn from_mandel(v: [f64; 3]) -> [[f64; 2]; 2] {
    let s = v[2] / SQRT_2;
    [[v[0], s], [s, v[1]]]
}

/// Four-index tensor `C_ijkl` represented by a Mandel matrix.
pub fn four_index(c: &Mandel) -> [[[[f64; 2]; 2]; 2]; 2] {
    // Mandel slot of index pair (i, j) and the scale attached to it.
    let slot = |i: usize, j: usize| -> (usize, f64) {
        match (i, j) {
            (0, 0) => (0, 1.0),
            (1, 1) => (1, 1.0),
            _ => (2, 1.0 / SQRT_2),
        }
    };
    let mut out = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let (a, sa) = slot(i, j);
                    let (b, sb) = slot(k, l);
                    out[i][j][k][l] = c[a][b] * sa * sb;
                }
            }
        }
    }
    out
}

/// Vector hat functions at the interior patch nodes, both components.
#[derive(Debug, Clone)]
pub struct DisplacementBasis {
    patch_nodes: Vec<usize>,
    /// `(node, component)` per basis function, node-major.
    dofs: Vec<(usize, usize)>,
    gram: Arc<BasisGram>,
}

impl DisplacementBasis {
    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    pub fn dofs(&self) -> &[(usize, usize)] {
        &self.dofs
    }

    pub fn patch_nodes(&self) -> &[usize] {
        &self.patch_nodes
    }

    pub fn gram(&self) -> &Arc<BasisGram> {
        &self.gram
    }
}

pub fn displacement_basis(mesh: &Mesh) -> Result<DisplacementBasis, ForwardError> {
    let nodes = patch_nodes(mesh)?;
    if nodes.len() < 3 {
        return Err(ForwardError::PatchTooSmall {
            nodes: nodes.len(),
            required: 3,
        });
    }
    let mass = boundary_mass_matrix(mesh)?;
    let interior: Vec<usize> = (1..nodes.len() - 1).collect();
    let dofs: Vec<(usize, usize)> = interior
        .iter()
        .flat_map(|&a| [(nodes[a], 0), (nodes[a], 1)])
        .collect();
    let k = dofs.len();
    let gram = DenseSym::from_fn(k, |p, q| {
        let (a, ca) = (interior[p / 2], p % 2);
        let (b, cb) = (interior[q / 2], q % 2);
        if ca == cb {
            mass.get(a, b)
        } else {
            0.0
        }
    });
    Ok(DisplacementBasis {
        patch_nodes: nodes,
        dofs,
        gram: Arc::new(BasisGram::new(gram)?),
    })
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

/// Mandel strain-displacement rows for one triangle: `ε = Σ_a B_a · (u_a, v_a)`.
fn strain_rows(mesh: &Mesh, t: &Triangle) -> ([[[f64; 3]; 2]; 3], f64) {
    let (g, area) = mesh.hat_gradients(t);
    let s = 1.0 / SQRT_2;
    let rows = std::array::from_fn(|a| {
        [
            [g[a][0], 0.0, s * g[a][1]],
            [0.0, g[a][1], s * g[a][0]],
        ]
    });
    (rows, area)
}

/// Vector P1 stiffness over all `2 × n_nodes` degrees of freedom (`2·node + component`).
pub fn assemble_full_elastic_stiffness(
    mesh: &Mesh,
    p: &ElasticityParams,
) -> Result<SparseSpd, ForwardError> {
    check_cells(mesh, p.n_cells())?;
    let mut builder = TripletBuilder::new(2 * mesh.n_nodes());
    for t in mesh.triangles() {
        let (b, area) = strain_rows(mesh, t);
        for a in 0..3 {
            for ca in 0..2 {
                let sb = p.apply(t.cell, b[a][ca]);
                for c in 0..3 {
                    for cc in 0..2 {
                        let e = b[c][cc];
                        let v = area * (sb[0] * e[0] + sb[1] * e[1] + sb[2] * e[2]);
                        builder.add(2 * t.nodes[a] + ca, 2 * t.nodes[c] + cc, v);
                    }
                }
            }
        }
    }
    Ok(builder.build())
}

/// Degrees of freedom at nodes off the boundary, ascending.
pub fn interior_dofs(mesh: &Mesh) -> Vec<usize> {
    (0..mesh.n_nodes())
        .filter(|&v| !mesh.is_boundary_node(v))
        .flat_map(|v| [2 * v, 2 * v + 1])
        .collect()
}

/// Stiffness on the zero-Dirichlet space (interior degrees of freedom only).
pub fn assemble_elastic_stiffness(
    mesh: &Mesh,
    p: &ElasticityParams,
) -> Result<SparseSpd, ForwardError> {
    let full = assemble_full_elastic_stiffness(mesh, p)?;
    Ok(full.principal_submatrix(&interior_dofs(mesh)))
}

/// How boundary displacements are extended into the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Lift {
    /// Boundary value at the patch node, zero at every other node.
    ZeroExtension,
    /// Zero extension plus the given values on the interior degrees of freedom,
    /// one vector (ordered as [`interior_dofs`]) per basis function.
    Interior(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct DnSolution {
    pub operator: DataOperator,
    /// Full nodal displacements `u_i = E f_i + w_i`.
    pub displacements: Vec<Vec<f64>>,
    pub raw_pairings: Vec<f64>,
}

pub fn dn_solve(
    mesh: &Mesh,
    p: &ElasticityParams,
    basis: &DisplacementBasis,
    lift: &Lift,
) -> Result<DnSolution, ForwardError> {
    let full = assemble_full_elastic_stiffness(mesh, p)?;
    let interior = interior_dofs(mesh);
    let factor = factor_spd(&full.principal_submatrix(&interior))?;
    let ndof = 2 * mesh.n_nodes();
    let k = basis.dim();

    let lifts: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut l = vec![0.0; ndof];
            let (node, comp) = basis.dofs[i];
            l[2 * node + comp] = 1.0;
            if let Lift::Interior(extra) = lift {
                for (&dof, &v) in interior.iter().zip(&extra[i]) {
                    l[dof] = v;
                }
            }
            l
        })
        .collect();

    let solved = lifts
        .par_iter()
        .map(|l| {
            let kl = full.matvec(l);
            let load: Vec<f64> = interior.iter().map(|&d| kl[d]).collect();
            let mut w = factor.solve(&load)?;
            w.iter_mut().for_each(|v| *v = -*v);
            Ok((kl, load, w))
        })
        .collect::<Result<Vec<_>, ForwardError>>()?;

    let mut raw = vec![0.0; k * k];
    for i in 0..k {
        let (kl_i, _, w_i) = &solved[i];
        for j in 0..k {
            let (_, load_j, _) = &solved[j];
            let q = dot(&lifts[j], kl_i);
            raw[i * k + j] = q + dot(load_j, w_i);
        }
    }

    let displacements = lifts
        .iter()
        .zip(&solved)
        .map(|(l, (_, _, w))| {
            let mut u = l.clone();
            for (&dof, &v) in interior.iter().zip(w) {
                u[dof] += v;
            }
            u
        })
        .collect();

    let matrix = DenseSym::from_row_major(k, raw.clone())?;
    let operator = DataOperator::new(matrix, basis.gram().clone(), OperatorKind::ElasticityDn)?;
    Ok(DnSolution {
        operator,
        displacements,
        raw_pairings: raw,
    })
}

/// `M[i][j] = ⟨Λ_ℂ f_i, f_j⟩` with the zero-extension lift.
pub fn dn_matrix(
    mesh: &Mesh,
    p: &ElasticityParams,
    basis: &DisplacementBasis,
) -> Result<DataOperator, ForwardError> {
    Ok(dn_solve(mesh, p, basis, &Lift::ZeroExtension)?.operator)
}

/// Directional derivative `d[i][j] = ∫ ℂ_dp ε(u_i) : ε(u_j)`.
pub fn dn_derivative(
    mesh: &Mesh,
    p: &ElasticityParams,
    dp: &ElasticityParams,
    basis: &DisplacementBasis,
) -> Result<DenseSym, ForwardError> {
    check_cells(mesh, dp.n_cells())?;
    let sol = dn_solve(mesh, p, basis, &Lift::ZeroExtension)?;
    Ok(elastic_energy_pairing(mesh, dp, &sol.displacements))
}

pub fn elastic_energy_pairing(mesh: &Mesh, c: &ElasticityParams, fields: &[Vec<f64>]) -> DenseSym {
    let k = fields.len();
    let mut raw = vec![0.0; k * k];
    let mut strains = vec![[0.0; 3]; k];
    for t in mesh.triangles() {
        let (b, area) = strain_rows(mesh, t);
        for (i, u) in fields.iter().enumerate() {
            let mut e = [0.0; 3];
            for a in 0..3 {
                for comp in 0..2 {
                    let ua = u[2 * t.nodes[a] + comp];
                    for r in 0..3 {
                        e[r] += b[a][comp][r] * ua;
                    }
                }
            }
            strains[i] = e;
        }
        for i in 0..k {
            let s = c.apply(t.cell, strains[i]);
            for j in 0..k {
                let e = strains[j];
                raw[i * k + j] += area * (s[0] * e[0] + s[1] * e[1] + s[2] * e[2]);
            }
        }
    }
    DenseSym::from_row_major(k, raw).expect("square by construction")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
