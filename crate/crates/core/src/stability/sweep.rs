use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conductivity::{current_basis, nd_derivative, nd_matrix, ConductivityParams, CurrentBasis};
use crate::elasticity::{displacement_basis, dn_derivative, dn_matrix, DisplacementBasis, ElasticityParams};
use crate::mesh::Mesh;
use crate::numerics::DenseSym;
use crate::operator::{operator_distance, DataOperator, ForwardError};
use crate::scalarization::{finite_distance, phi, probe_weights, MeasurementSet, ProbeWeights};

use super::sampling::{rng_for, sample_at, CellParams, CompactSetSpec};
use super::StabilityError;

pub const INJECTIVITY_FLAG: &str = "injectivity_violation";

/// Stream offset for ray directions, disjoint from sample indices.
const DIRECTION_STREAM: u64 = 1 << 40;

/// Parameter-to-operator map on a fixed mesh and boundary basis.
pub trait ForwardModel: Sync {
    type Params: CellParams;

    fn n_cells(&self) -> usize;
    fn basis_dim(&self) -> usize;
    fn operator(&self, p: &Self::Params) -> Result<DataOperator, ForwardError>;
    /// Directional derivative of the operator matrix at `p` along `dp`.
    fn derivative(&self, p: &Self::Params, dp: &Self::Params) -> Result<DenseSym, ForwardError>;
}

pub struct ConductivityModel {
    mesh: Mesh,
    basis: CurrentBasis,
}

impl ConductivityModel {
    pub fn new(mesh: Mesh) -> Result<Self, ForwardError> {
        let basis = current_basis(&mesh)?;
        Ok(Self { mesh, basis })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn basis(&self) -> &CurrentBasis {
        &self.basis
    }
}

impl ForwardModel for ConductivityModel {
    type Params = ConductivityParams;

    fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    fn basis_dim(&self) -> usize {
        self.basis.dim()
    }

    fn operator(&self, p: &ConductivityParams) -> Result<DataOperator, ForwardError> {
        nd_matrix(&self.mesh, p, &self.basis)
    }

    fn derivative(&self, p: &ConductivityParams, dp: &ConductivityParams) -> Result<DenseSym, ForwardError> {
        nd_derivative(&self.mesh, p, dp, &self.basis)
    }
}

pub struct ElasticityModel {
    mesh: Mesh,
    basis: DisplacementBasis,
}

impl ElasticityModel {
    pub fn new(mesh: Mesh) -> Result<Self, ForwardError> {
        let basis = displacement_basis(&mesh)?;
        Ok(Self { mesh, basis })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn basis(&self) -> &DisplacementBasis {
        &self.basis
    }
}

impl ForwardModel for ElasticityModel {
    type Params = ElasticityParams;

    fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    fn basis_dim(&self) -> usize {
        self.basis.dim()
    }

    fn operator(&self, p: &ElasticityParams) -> Result<DataOperator, ForwardError> {
        dn_matrix(&self.mesh, p, &self.basis)
    }

    fn derivative(&self, p: &ElasticityParams, dp: &ElasticityParams) -> Result<DenseSym, ForwardError> {
        dn_derivative(&self.mesh, p, dp, &self.basis)
    }
}

/// Cells whose parameters are compared in `δ_R`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredQuantity {
    cells: Vec<usize>,
}

impl RecoveredQuantity {
    pub fn new(cells: Vec<usize>, n_cells: usize) -> Result<Self, StabilityError> {
        if cells.is_empty() {
            return Err(StabilityError::InvalidSpec("recovered cell list is empty".into()));
        }
        if let Some(&c) = cells.iter().find(|&&c| c >= n_cells) {
            return Err(StabilityError::InvalidSpec(format!(
                "recovered cell {c} out of range for {n_cells} cells"
            )));
        }
        Ok(Self { cells })
    }

    pub fn all(n_cells: usize) -> Self {
        Self {
            cells: (0..n_cells).collect(),
        }
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn delta<P: CellParams>(&self, p: &P, q: &P) -> f64 {
        self.cells
            .iter()
            .map(|&c| p.cell_distance(q, c))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    RandomRandom,
    NearDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub pair_id: u64,
    pub kind: PairKind,
    /// Ray step; empty for random pairs.
    pub t: Option<f64>,
    #[serde(rename = "delta_R")]
    pub delta_r: f64,
    #[serde(rename = "delta_F")]
    pub delta_f: f64,
    pub phi: f64,
    pub delta_finite: Option<f64>,
    pub flags: String,
}

impl StabilityRecord {
    pub fn is_injectivity_violation(&self) -> bool {
        self.flags.split(';').any(|f| f == INJECTIVITY_FLAG)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_random_pairs: usize,
    pub n_rays: usize,
    pub ray_steps: usize,
    pub seed: u64,
    /// Probe truncation order for `phi`.
    pub probe_k: usize,
}

/// `n` log-spaced steps covering `[1e-6, 1e-1]`.
pub fn ray_steps(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1e-6],
        _ => (0..n)
            .map(|s| 10f64.powf(-6.0 + 5.0 * s as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub pair_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Ordered by `pair_id`.
    pub records: Vec<StabilityRecord>,
    pub dropped: Vec<DroppedPair>,
    /// Operator pair behind each record, aligned with `records`.
    pub operators: Vec<(DataOperator, DataOperator)>,
}

impl SweepOutput {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.delta_f, r.delta_r)).collect()
    }
}

enum Outcome {
    Kept(StabilityRecord, DataOperator, DataOperator),
    Dropped(DroppedPair),
}

fn make_record(
    pair_id: u64,
    kind: PairKind,
    t: Option<f64>,
    delta_r: f64,
    a: DataOperator,
    b: DataOperator,
    weights: &ProbeWeights,
) -> Outcome {
    let evaluated = operator_distance(&a, &b)
        .map_err(|e| e.to_string())
        .and_then(|d| phi(&a, &b, weights).map(|p| (d, p)).map_err(|e| e.to_string()));
    match evaluated {
        Ok((delta_f, phi)) if delta_f.is_finite() && phi.is_finite() && delta_r.is_finite() => {
            let flags = if delta_f == 0.0 && delta_r > 0.0 {
                INJECTIVITY_FLAG.to_string()
            } else {
                String::new()
            };
            Outcome::Kept(
                StabilityRecord {
                    pair_id,
                    kind,
                    t,
                    delta_r,
                    delta_f,
                    phi,
                    delta_finite: None,
                    flags,
                },
                a,
                b,
            )
        }
        Ok(_) => Outcome::Dropped(DroppedPair {
            pair_id,
            reason: "NonFinite".into(),
        }),
        Err(reason) => Outcome::Dropped(DroppedPair { pair_id, reason }),
    }
}

/// Distance records over random pairs and near-diagonal rays.
///
/// Random pair `j` compares samples `2j` and `2j + 1`. Ray `r` starts at sample
/// `2·n_random_pairs + r` and moves along a unit-Frobenius direction drawn from
/// its own stream. Pair ids are `j` for random pairs and
/// `n_random_pairs + r·ray_steps + s` for ray steps. Pairs whose perturbed
/// parameter leaves the positive-definite cone, or whose forward solve fails,
/// are dropped and reported.
pub fn sweep<M: ForwardModel>(
    model: &M,
    spec: &CompactSetSpec,
    rq: &RecoveredQuantity,
    config: &SweepConfig,
) -> Result<SweepOutput, StabilityError> {
    if spec.n_cells != model.n_cells() {
        return Err(StabilityError::InvalidSpec(format!(
            "class has {} cells, mesh partition has {}",
            spec.n_cells,
            model.n_cells()
        )));
    }
    if spec.kind != M::Params::KIND {
        return Err(StabilityError::InvalidSpec(format!(
            "class kind {:?} does not match the forward model",
            spec.kind
        )));
    }
    if rq.cells().iter().any(|&c| c >= model.n_cells()) {
        return Err(StabilityError::InvalidSpec("recovered cell out of range".into()));
    }
    let weights = probe_weights(config.probe_k)?;
    if config.probe_k > model.basis_dim() {
        return Err(StabilityError::InvalidSpec(format!(
            "probe_k {} exceeds basis dimension {}",
            config.probe_k,
            model.basis_dim()
        )));
    }
    let seed = config.seed;
    let n_random = config.n_random_pairs as u64;

    let random: Vec<Outcome> = (0..n_random)
        .into_par_iter()
        .map(|j| {
            let p: M::Params = sample_at(spec, seed, 2 * j);
            let q: M::Params = sample_at(spec, seed, 2 * j + 1);
            let delta_r = rq.delta(&p, &q);
            match (model.operator(&p), model.operator(&q)) {
                (Ok(a), Ok(b)) => make_record(j, PairKind::RandomRandom, None, delta_r, a, b, &weights),
                (Err(e), _) | (_, Err(e)) => Outcome::Dropped(DroppedPair {
                    pair_id: j,
                    reason: e.name().into(),
                }),
            }
        })
        .collect();

    let steps = ray_steps(config.ray_steps);
    let n_steps = steps.len() as u64;
    let bases: Vec<(M::Params, M::Params, Result<DataOperator, ForwardError>)> = (0..config.n_rays as u64)
        .into_par_iter()
        .map(|r| {
            let p: M::Params = sample_at(spec, seed, 2 * n_random + r);
            let dir = M::Params::unit_direction(spec.n_cells, &mut rng_for(seed, DIRECTION_STREAM + r));
            let op = model.operator(&p);
            (p, dir, op)
        })
        .collect();
    let tasks: Vec<(u64, u64)> = (0..config.n_rays as u64)
        .flat_map(|r| (0..n_steps).map(move |s| (r, s)))
        .collect();
    let rays: Vec<Outcome> = tasks
        .par_iter()
        .map(|&(r, s)| {
            let pair_id = n_random + r * n_steps + s;
            let t = steps[s as usize];
            let (p, dir, base) = &bases[r as usize];
            let q = p.perturbed(t, dir);
            if !q.is_positive_definite() {
                return Outcome::Dropped(DroppedPair {
                    pair_id,
                    reason: "NotPositiveDefinite".into(),
                });
            }
            let a = match base {
                Ok(a) => a.clone(),
                Err(e) => {
                    return Outcome::Dropped(DroppedPair {
                        pair_id,
                        reason: e.name().into(),
                    })
                }
            };
            match model.operator(&q) {
                Ok(b) => make_record(pair_id, PairKind::NearDiagonal, Some(t), rq.delta(p, &q), a, b, &weights),
                Err(e) => Outcome::Dropped(DroppedPair {
                    pair_id,
                    reason: e.name().into(),
                }),
            }
        })
        .collect();

    let mut out = SweepOutput {
        records: Vec::new(),
        dropped: Vec::new(),
        operators: Vec::new(),
    };
    for outcome in random.into_iter().chain(rays) {
        match outcome {
            Outcome::Kept(rec, a, b) => {
                out.records.push(rec);
                out.operators.push((a, b));
            }
            Outcome::Dropped(d) => out.dropped.push(d),
        }
    }
    Ok(out)
}

/// Fills `delta_finite` of every record from its operator pair.
pub fn attach_finite(output: &mut SweepOutput, set: &MeasurementSet) -> Result<(), StabilityError> {
    let values = output
        .operators
        .par_iter()
        .map(|(a, b)| finite_distance(set, a, b))
        .collect::<Result<Vec<_>, _>>()?;
    for (rec, v) in output.records.iter_mut().zip(values) {
        rec.delta_finite = Some(v);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub floor: f64,
    pub scale: f64,
    /// Pair ids with `δ_R > floor` and `δ_F < floor·scale`.
    pub candidates: Vec<u64>,
}

impl InjectivityReport {
    pub fn passed(&self) -> bool {
        self.candidates.is_empty()
    }
}

pub fn injectivity_probe(records: &[StabilityRecord], floor: f64, scale: f64) -> InjectivityReport {
    let candidates = records
        .iter()
        .filter(|r| r.delta_r > floor && r.delta_f < floor * scale)
        .map(|r| r.pair_id)
        .collect();
    InjectivityReport {
        floor,
        scale,
        candidates,
    }
}

/// Writes records as CSV with a header row.
pub fn write_records<W: Write>(w: W, records: &[StabilityRecord]) -> Result<(), StabilityError> {
    let mut writer = csv::Writer::from_writer(w);
    for r in records {
        writer
            .serialize(r)
            .map_err(|e| StabilityError::Records(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| StabilityError::Records(e.to_string()))
}

/// Reads records written by [`write_records`]; lines starting with `#` are skipped.
pub fn read_records<R: Read>(r: R) -> Result<Vec<StabilityRecord>, StabilityError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| StabilityError::Records(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, PartitionSpec, PatchSpec, Side};
    use crate::stability::ProblemKind;

    fn conductivity_model(n_sub: usize, cols: usize) -> ConductivityModel {
        let mesh = build_mesh(
            n_sub,
            PartitionSpec::new(cols, 1).unwrap(),
            PatchSpec::full(Side::Bottom),
        )
        .unwrap();
        ConductivityModel::new(mesh).unwrap()
    }

    #[test]
    fn bookkeeping_and_ids() {
        let model = conductivity_model(4, 2);
        let spec = CompactSetSpec::new(0.5, 2.0, 2, ProblemKind::Conductivity).unwrap();
        let cfg = SweepConfig {
            n_random_pairs: 5,
            n_rays: 2,
            ray_steps: 3,
            seed: 11,
            probe_k: 3,
        };
        let out = sweep(&model, &spec, &RecoveredQuantity::all(2), &cfg).unwrap();
        assert_eq!(out.records.len() + out.dropped.len(), 5 + 2 * 3);
        let ids: Vec<u64> = out.records.iter().map(|r| r.pair_id).collect();
        assert_eq!(ids, (0..11).collect::<Vec<_>>());
        for r in &out.records {
            assert!(r.delta_r >= 0.0 && r.delta_f >= 0.0 && r.phi >= 0.0);
            assert_eq!(r.t.is_some(), r.kind == PairKind::NearDiagonal);
        }
        assert_eq!(out.records[5].t, Some(1e-6));
        assert!((out.records[7].t.unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn one_cell_ray_along_identity() {
        let model = conductivity_model(4, 1);
        let p = ConductivityParams::isotropic(1, 1.0).unwrap();
        let m_id = model.operator(&p).unwrap();
        let base_norm = operator_distance(&m_id, &m_id.with_matrix(crate::numerics::DenseSym::zeros(m_id.dim())).unwrap()).unwrap();
        let dir = ConductivityParams::direction(vec![[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0]]);
        let rq = RecoveredQuantity::all(1);
        for t in ray_steps(6) {
            let q = p.axpy(t, &dir);
            let a = 1.0 + t / 2f64.sqrt();
            let d_f = operator_distance(&m_id, &model.operator(&q).unwrap()).unwrap();
            let oracle = (1.0 - 1.0 / a) * base_norm;
            assert!((d_f - oracle).abs() <= 1e-8 * oracle + 1e-14, "t={t}: {d_f} vs {oracle}");
            assert!((rq.delta(&p, &q) - t).abs() < 1e-15);
        }
    }

    #[test]
    fn one_cell_sweep_is_injective() {
        let model = conductivity_model(4, 1);
        let spec = CompactSetSpec::new(0.5, 2.0, 1, ProblemKind::Conductivity).unwrap();
        let cfg = SweepConfig {
            n_random_pairs: 10,
            n_rays: 3,
            ray_steps: 5,
            seed: 2,
            probe_k: 3,
        };
        let out = sweep(&model, &spec, &RecoveredQuantity::all(1), &cfg).unwrap();
        assert!(injectivity_probe(&out.records, 1e-8, 1.0).passed());
        assert!(out.records.iter().all(|r| !r.is_injectivity_violation()));
    }

    #[test]
    fn probe_edge_cases() {
        let rec = StabilityRecord {
            pair_id: 7,
            kind: PairKind::RandomRandom,
            t: None,
            delta_r: 1.0,
            delta_f: 0.0,
            phi: 0.0,
            delta_finite: None,
            flags: INJECTIVITY_FLAG.into(),
        };
        assert_eq!(injectivity_probe(&[rec.clone()], 1e-8, 1.0).candidates, vec![7]);
        assert!(injectivity_probe(&[rec], f64::INFINITY, 1.0).passed());
    }

    #[test]
    fn csv_round_trip() {
        let model = conductivity_model(4, 2);
        let spec = CompactSetSpec::new(0.5, 2.0, 2, ProblemKind::Conductivity).unwrap();
        let cfg = SweepConfig {
            n_random_pairs: 3,
            n_rays: 1,
            ray_steps: 2,
            seed: 5,
            probe_k: 2,
        };
        let mut out = sweep(&model, &spec, &RecoveredQuantity::all(2), &cfg).unwrap();
        attach_finite(&mut out, &MeasurementSet::upper_pairs(2)).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &out.records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("pair_id,kind,t,delta_R,delta_F,phi,delta_finite,flags\n"));
        let mut commented = b"# comment\n".to_vec();
        commented.extend_from_slice(&buf);
        assert_eq!(read_records(&commented[..]).unwrap(), out.records);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let model = conductivity_model(4, 2);
        let cfg = SweepConfig {
            n_random_pairs: 1,
            n_rays: 0,
            ray_steps: 0,
            seed: 0,
            probe_k: 2,
        };
        let wrong_cells = CompactSetSpec::new(0.5, 2.0, 3, ProblemKind::Conductivity).unwrap();
        assert!(sweep(&model, &wrong_cells, &RecoveredQuantity::all(2), &cfg).is_err());
        let wrong_kind = CompactSetSpec::new(0.5, 2.0, 2, ProblemKind::Elasticity).unwrap();
        assert!(sweep(&model, &wrong_kind, &RecoveredQuantity::all(2), &cfg).is_err());
        assert!(RecoveredQuantity::new(vec![], 2).is_err());
        assert!(RecoveredQuantity::new(vec![2], 2).is_err());
    }
}
