//! Discretized boundary data operators and the Gram-whitened distance between them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshError;
use crate::numerics::{spectral_norm, DenseSym, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("parameter has {found} cells, partition has {expected}")]
    CellCountMismatch { expected: usize, found: usize },
    #[error("cell {cell} is not positive definite (min eigenvalue {eig_min:e})")]
    NotPositiveDefinite { cell: usize, eig_min: f64 },
    #[error("patch has {nodes} nodes, at least {required} required")]
    PatchTooSmall { nodes: usize, required: usize },
    #[error("operators are expressed in different boundary bases")]
    BasisMismatch,
}

impl ForwardError {
    /// Short variant name used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            ForwardError::Mesh(MeshError::EmptyPatch) => "EmptyPatch",
            ForwardError::Mesh(MeshError::IncompatibleSubdivision { .. }) => {
                "IncompatibleSubdivision"
            }
            ForwardError::Mesh(_) => "MeshError",
            ForwardError::Numerics(NumericsError::NotPositiveDefinite { .. }) => {
                "NotPositiveDefinite"
            }
            ForwardError::Numerics(_) => "NumericsError",
            ForwardError::CellCountMismatch { .. } => "CellCountMismatch",
            ForwardError::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            ForwardError::PatchTooSmall { .. } => "PatchTooSmall",
            ForwardError::BasisMismatch => "BasisMismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    ConductivityNd,
    ElasticityDn,
}

/// Gram matrix of a boundary basis together with its inverse square root.
///
/// The data norm on basis coefficients is `‖α‖² = αᵀ G α`.
#[derive(Debug, Clone)]
pub struct BasisGram {
    gram: DenseSym,
    inv_sqrt: DenseSym,
}

impl BasisGram {
    pub fn new(gram: DenseSym) -> Result<Self, NumericsError> {
        let inv_sqrt = gram.spd_power(-0.5)?;
        Ok(Self { gram, inv_sqrt })
    }

    pub fn matrix(&self) -> &DenseSym {
        &self.gram
    }

    pub fn inv_sqrt(&self) -> &DenseSym {
        &self.inv_sqrt
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    /// `G^{-1/2} M G^{-1/2}`.
    pub fn whiten(&self, m: &DenseSym) -> DenseSym {
        m.congruence(self.inv_sqrt.as_row_major(), self.dim())
    }
}

/// Symmetric matrix `M[i][j] = ⟨F(p) b_i, b_j⟩` in a fixed boundary basis.
#[derive(Debug, Clone)]
pub struct DataOperator {
    matrix: DenseSym,
    gram: Arc<BasisGram>,
    kind: OperatorKind,
}

impl DataOperator {
    pub fn new(
        matrix: DenseSym,
        gram: Arc<BasisGram>,
        kind: OperatorKind,
    ) -> Result<Self, NumericsError> {
        if matrix.dim() != gram.dim() {
            return Err(NumericsError::DimensionMismatch {
                expected: gram.dim(),
                found: matrix.dim(),
            });
        }
        Ok(Self { matrix, gram, kind })
    }

    pub fn matrix(&self) -> &DenseSym {
        &self.matrix
    }

    pub fn gram(&self) -> &Arc<BasisGram> {
        &self.gram
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Same basis, different matrix.
    pub fn with_matrix(&self, matrix: DenseSym) -> Result<Self, NumericsError> {
        Self::new(matrix, self.gram.clone(), self.kind)
    }

    pub fn same_basis(&self, other: &Self) -> bool {
        self.kind == other.kind
            && (Arc::ptr_eq(&self.gram, &other.gram) || self.gram.gram == other.gram.gram)
    }

    /// Whitened difference `G^{-1/2}(M_a − M_b)G^{-1/2}`.
    pub fn whitened_difference(&self, other: &Self) -> Result<DenseSym, ForwardError> {
        if !self.same_basis(other) {
            return Err(ForwardError::BasisMismatch);
        }
        let diff = self.matrix.sub(&other.matrix)?;
        Ok(self.gram.whiten(&diff))
    }
}

/// Operator norm of `F(a) − F(b)` with respect to the Gram-induced data norm.
pub fn operator_distance(a: &DataOperator, b: &DataOperator) -> Result<f64, ForwardError> {
    Ok(spectral_norm(&a.whitened_difference(b)?))
}
