//! Structured triangulations of the unit square with a known rectangular cell
//! partition and one marked boundary patch.
//!
//! Node `(i, j)` sits at `(i / n_sub, j / n_sub)` and has index `j * (n_sub + 1) + i`.
//! Every grid square is cut along its bottom-left to top-right diagonal.
//! The boundary is traversed counterclockwise and a patch is an arclength
//! interval `[t0, t1)` on one side, measured in that traversal direction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::DenseSym;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("n_sub = {n_sub} is not divisible by the {cols}x{rows} partition")]
    IncompatibleSubdivision { n_sub: usize, cols: usize, rows: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid patch interval [{t0}, {t1}]")]
    InvalidPatch { t0: f64, t1: f64 },
    #[error("measured boundary patch is empty")]
    EmptyPatch,
}

/// `cols × rows` rectangular tiling of the unit square; cells are indexed row-major from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    cols: usize,
    rows: usize,
}

impl PartitionSpec {
    pub fn new(cols: usize, rows: usize) -> Result<Self, MeshError> {
        if cols == 0 || rows == 0 {
            return Err(MeshError::InvalidPartition(format!(
                "grid must be at least 1x1, got {cols}x{rows}"
            )));
        }
        Ok(Self { cols, rows })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_cells(&self) -> usize {
        self.cols * self.rows
    }

    /// Cell containing the point; points on the upper/right edge of the square
    /// belong to the last column/row.
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        let c = ((x * self.cols as f64).floor() as usize).min(self.cols - 1);
        let r = ((y * self.rows as f64).floor() as usize).min(self.rows - 1);
        r * self.cols + c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    /// Counterclockwise arclength fraction of `(x, y)` along this side.
    fn arclength(self, x: f64, y: f64) -> f64 {
        match self {
            Side::Bottom => x,
            Side::Right => y,
            Side::Top => 1.0 - x,
            Side::Left => 1.0 - y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    side: Side,
    t0: f64,
    t1: f64,
}

impl PatchSpec {
    pub fn new(side: Side, t0: f64, t1: f64) -> Result<Self, MeshError> {
        if !(0.0 <= t0 && t0 < t1 && t1 <= 1.0) {
            return Err(MeshError::InvalidPatch { t0, t1 });
        }
        Ok(Self { side, t0, t1 })
    }

    pub fn full(side: Side) -> Self {
        Self {
            side,
            t0: 0.0,
            t1: 1.0,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    fn contains(&self, t: f64) -> bool {
        self.t0 <= t && t < self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub nodes: [usize; 3],
    /// 0-based cell index (written 1-based in exported files).
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    /// Endpoints in counterclockwise order.
    pub nodes: [usize; 2],
    pub on_patch: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    n_sub: usize,
    partition: PartitionSpec,
    patch: PatchSpec,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<Triangle>,
    boundary_edges: Vec<BoundaryEdge>,
}

pub fn build_mesh(n_sub: usize, part: PartitionSpec, patch: PatchSpec) -> Result<Mesh, MeshError> {
    if n_sub == 0 || n_sub % part.cols != 0 || n_sub % part.rows != 0 {
        return Err(MeshError::IncompatibleSubdivision {
            n_sub,
            cols: part.cols,
            rows: part.rows,
        });
    }
    let n = n_sub;
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;

    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            for tri in [[a, b, c], [a, c, d]] {
                let cx = tri.iter().map(|&v| nodes[v][0]).sum::<f64>() / 3.0;
                let cy = tri.iter().map(|&v| nodes[v][1]).sum::<f64>() / 3.0;
                triangles.push(Triangle {
                    nodes: tri,
                    cell: part.cell_of(cx, cy),
                });
            }
        }
    }

    // Counterclockwise boundary walk starting at the origin.
    let mut walk = Vec::with_capacity(4 * n);
    for i in 0..n {
        walk.push((Side::Bottom, [idx(i, 0), idx(i + 1, 0)]));
    }
    for j in 0..n {
        walk.push((Side::Right, [idx(n, j), idx(n, j + 1)]));
    }
    for i in (0..n).rev() {
        walk.push((Side::Top, [idx(i + 1, n), idx(i, n)]));
    }
    for j in (0..n).rev() {
        walk.push((Side::Left, [idx(0, j + 1), idx(0, j)]));
    }
    let boundary_edges = walk
        .into_iter()
        .map(|(side, e)| {
            let mx = 0.5 * (nodes[e[0]][0] + nodes[e[1]][0]);
            let my = 0.5 * (nodes[e[0]][1] + nodes[e[1]][1]);
            BoundaryEdge {
                nodes: e,
                on_patch: side == patch.side && patch.contains(side.arclength(mx, my)),
            }
        })
        .collect();

    Ok(Mesh {
        n_sub,
        partition: part,
        patch,
        nodes,
        triangles,
        boundary_edges,
    })
}

impl Mesh {
    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn partition(&self) -> PartitionSpec {
        self.partition
    }

    pub fn patch(&self) -> PatchSpec {
        self.patch
    }

    pub fn n_cells(&self) -> usize {
        self.partition.n_cells()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn patch_edges(&self) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(|e| e.on_patch)
    }

    /// Signed area of a triangle (positive for counterclockwise orientation).
    pub fn signed_area(&self, t: &Triangle) -> f64 {
        let [a, b, c] = t.nodes.map(|v| self.nodes[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Gradients of the three barycentric hat functions on a triangle, with its area.
    pub fn hat_gradients(&self, t: &Triangle) -> ([[f64; 2]; 3], f64) {
        let [a, b, c] = t.nodes.map(|v| self.nodes[v]);
        let area = self.signed_area(t);
        let s = 1.0 / (2.0 * area);
        (
            [
                [(b[1] - c[1]) * s, (c[0] - b[0]) * s],
                [(c[1] - a[1]) * s, (a[0] - c[0]) * s],
                [(a[1] - b[1]) * s, (b[0] - a[0]) * s],
            ],
            area,
        )
    }

    /// Whether a node lies on the boundary of the square.
    pub fn is_boundary_node(&self, v: usize) -> bool {
        let n = self.n_sub + 1;
        let (i, j) = (v % n, v / n);
        i == 0 || j == 0 || i == self.n_sub || j == self.n_sub
    }

    /// Plain-text export: one `x y` line per node, then one `i j k label` line
    /// per triangle with 0-based node indices and 1-based cell labels.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for [x, y] in &self.nodes {
            let _ = writeln!(out, "{x} {y}");
        }
        for t in &self.triangles {
            let [i, j, k] = t.nodes;
            let _ = writeln!(out, "{i} {j} {k} {}", t.cell + 1);
        }
        out
    }
}

/// Patch nodes in counterclockwise arclength order, endpoints included.
pub fn patch_nodes(mesh: &Mesh) -> Result<Vec<usize>, MeshError> {
    let mut out: Vec<usize> = Vec::new();
    for e in mesh.patch_edges() {
        if out.is_empty() {
            out.push(e.nodes[0]);
        }
        debug_assert_eq!(out.last(), Some(&e.nodes[0]), "patch must be contiguous");
        out.push(e.nodes[1]);
    }
    if out.is_empty() {
        return Err(MeshError::EmptyPatch);
    }
    Ok(out)
}

/// L² Gram matrix of the 1D hat functions at the patch nodes, restricted to the patch.
pub fn boundary_mass_matrix(mesh: &Mesh) -> Result<DenseSym, MeshError> {
    let nodes = patch_nodes(mesh)?;
    let m = nodes.len();
    let mut raw = vec![0.0; m * m];
    for e in 0..m - 1 {
        let [a, b] = [mesh.nodes[nodes[e]], mesh.nodes[nodes[e + 1]]];
        let h = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        raw[e * m + e] += h / 3.0;
        raw[(e + 1) * m + e + 1] += h / 3.0;
        raw[e * m + e + 1] += h / 6.0;
        raw[(e + 1) * m + e] += h / 6.0;
    }
    Ok(DenseSym::from_row_major(m, raw).expect("square by construction"))
}
