//! TOML experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stablab::mesh::{build_mesh, Mesh, PartitionSpec, PatchSpec, Side};
use stablab::stability::{
    CompactSetSpec, ConductivityModel, ElasticityModel, ForwardModel, ProblemKind, RecoveredQuantity,
};

/// Configuration failure; reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub side: Side,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "one")]
    pub t1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n_sub: usize,
    /// `[cols, rows]`.
    pub partition: [usize; 2],
    pub patch: PatchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactSetConfig {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveredConfig {
    /// Cell indices compared in `delta_R`; all cells when absent.
    pub cells: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSizes {
    #[serde(default = "default_random_pairs")]
    pub n_random_pairs: usize,
    #[serde(default = "default_rays")]
    pub n_rays: usize,
    #[serde(default = "default_rays")]
    pub ray_steps: usize,
}

impl Default for SweepSizes {
    fn default() -> Self {
        Self {
            n_random_pairs: default_random_pairs(),
            n_rays: default_rays(),
            ray_steps: default_rays(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Truncation order; the basis dimension when absent.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    #[serde(default = "default_ratio")]
    pub target_ratio: f64,
    /// Largest measurement set; `k(k+1)/2` when absent.
    pub max_size: Option<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            target_ratio: default_ratio(),
            max_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_bins: default_bins(),
            slack: default_slack(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    /// Index of the class sample whose operator is written.
    #[serde(default)]
    pub sample_index: u64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { sample_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivcheckConfig {
    #[serde(default = "default_directions")]
    pub n_directions: usize,
    #[serde(default = "default_steps")]
    pub steps: Vec<f64>,
}

impl Default for DerivcheckConfig {
    fn default() -> Self {
        Self {
            n_directions: default_directions(),
            steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    #[serde(default = "default_ts")]
    pub ts: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            ts: default_ts(),
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "name_mesh")]
    pub mesh: String,
    #[serde(default = "name_operator")]
    pub operator: String,
    #[serde(default = "name_derivcheck")]
    pub derivcheck: String,
    #[serde(default = "name_records")]
    pub records: String,
    #[serde(default = "name_fit")]
    pub fit: String,
    #[serde(default = "name_selection")]
    pub selection: String,
    #[serde(default = "name_counterexample")]
    pub counterexample: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            mesh: name_mesh(),
            operator: name_operator(),
            derivcheck: name_derivcheck(),
            records: name_records(),
            fit: name_fit(),
            selection: name_selection(),
            counterexample: name_counterexample(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub problem: ProblemKind,
    pub mesh: MeshConfig,
    pub compact_set: CompactSetConfig,
    #[serde(default)]
    pub recovered: RecoveredConfig,
    #[serde(default)]
    pub sweep: SweepSizes,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub derivcheck: DerivcheckConfig,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}
fn default_random_pairs() -> usize {
    200
}
fn default_rays() -> usize {
    20
}
fn default_ratio() -> f64 {
    0.5
}
fn default_bins() -> usize {
    10
}
fn default_slack() -> f64 {
    0.1
}
fn default_directions() -> usize {
    3
}
fn default_steps() -> Vec<f64> {
    vec![1e-3, 1e-4, 1e-5]
}
fn default_ts() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 20.0).collect()
}
fn default_tol() -> f64 {
    1e-10
}
fn default_dir() -> PathBuf {
    PathBuf::from(".")
}
fn name_mesh() -> String {
    "mesh.txt".into()
}
fn name_operator() -> String {
    "operator.csv".into()
}
fn name_derivcheck() -> String {
    "derivcheck.csv".into()
}
fn name_records() -> String {
    "records.csv".into()
}
fn name_fit() -> String {
    "fit.json".into()
}
fn name_selection() -> String {
    "selection.csv".into()
}
fn name_counterexample() -> String {
    "counterexample.csv".into()
}

/// Parsed configuration plus the hash of its source bytes.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ConfigError::new(path.display().to_string(), format!("cannot read config: {e}")))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| ConfigError::new(path.display().to_string(), "config is not UTF-8"))?;
    let config: ExperimentConfig = toml::from_str(text)
        .map_err(|e| ConfigError::new(path.display().to_string(), e.to_string().trim_end().to_string()))?;
    let config = config.resolve()?;
    Ok(LoadedConfig {
        config,
        hash: sha256_hex(&bytes),
    })
}

/// Forward model for the configured problem.
pub enum Model {
    Conductivity(ConductivityModel),
    Elasticity(ElasticityModel),
}

impl Model {
    pub fn basis_dim(&self) -> usize {
        match self {
            Model::Conductivity(m) => m.basis_dim(),
            Model::Elasticity(m) => m.basis_dim(),
        }
    }
}

impl ExperimentConfig {
    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        let m = &self.mesh;
        let part = PartitionSpec::new(m.partition[0], m.partition[1])
            .map_err(|e| ConfigError::new("mesh.partition", e.to_string()))?;
        let patch = PatchSpec::new(m.patch.side, m.patch.t0, m.patch.t1)
            .map_err(|e| ConfigError::new("mesh.patch", e.to_string()))?;
        build_mesh(m.n_sub, part, patch).map_err(|e| ConfigError::new("mesh.n_sub", e.to_string()))
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        let mesh = self.build_mesh()?;
        let wrap = |e: stablab::operator::ForwardError| ConfigError::new("mesh.patch", e.to_string());
        Ok(match self.problem {
            ProblemKind::Conductivity => Model::Conductivity(ConductivityModel::new(mesh).map_err(wrap)?),
            ProblemKind::Elasticity => Model::Elasticity(ElasticityModel::new(mesh).map_err(wrap)?),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.partition[0] * self.mesh.partition[1]
    }

    pub fn compact_set(&self) -> CompactSetSpec {
        CompactSetSpec {
            lambda_lo: self.compact_set.lambda_lo,
            lambda_hi: self.compact_set.lambda_hi,
            n_cells: self.n_cells(),
            kind: self.problem,
        }
    }

    pub fn recovered(&self) -> RecoveredQuantity {
        RecoveredQuantity::new(self.recovered.cells.clone().unwrap_or_default(), self.n_cells())
            .expect("validated in resolve")
    }

    pub fn probe_k(&self) -> usize {
        self.probe.k.expect("filled in by resolve")
    }

    pub fn max_size(&self) -> usize {
        self.select.max_size.expect("filled in by resolve")
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output.dir.join(name)
    }

    /// Validates every field and fills defaults that depend on the mesh.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let cs = &self.compact_set;
        if !(cs.lambda_lo > 0.0) {
            return Err(ConfigError::new("compact_set.lambda_lo", "must be positive"));
        }
        if !(cs.lambda_lo < cs.lambda_hi) || !cs.lambda_hi.is_finite() {
            return Err(ConfigError::new(
                "compact_set.lambda_lo",
                format!("must be below compact_set.lambda_hi ({} >= {})", cs.lambda_lo, cs.lambda_hi),
            ));
        }
        let model = self.model()?;
        let n_cells = self.n_cells();
        let cells = self.recovered.cells.clone().unwrap_or_else(|| (0..n_cells).collect());
        RecoveredQuantity::new(cells.clone(), n_cells)
            .map_err(|e| ConfigError::new("recovered.cells", e.to_string()))?;
        self.recovered.cells = Some(cells);

        let dim = model.basis_dim();
        let k = self.probe.k.unwrap_or(dim);
        if k == 0 || k > dim {
            return Err(ConfigError::new("probe.k", format!("must be in 1..={dim}, got {k}")));
        }
        self.probe.k = Some(k);

        let t = self.select.target_ratio;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ConfigError::new("select.target_ratio", format!("must be in (0, 1], got {t}")));
        }
        let max_size = self.select.max_size.unwrap_or(dim * (dim + 1) / 2);
        if max_size == 0 {
            return Err(ConfigError::new("select.max_size", "must be positive"));
        }
        self.select.max_size = Some(max_size);

        if self.fit.n_bins < 2 {
            return Err(ConfigError::new("fit.n_bins", "must be at least 2"));
        }
        if !(self.fit.slack >= 0.0 && self.fit.slack.is_finite()) {
            return Err(ConfigError::new("fit.slack", "must be finite and non-negative"));
        }
        if self.derivcheck.n_directions == 0 {
            return Err(ConfigError::new("derivcheck.n_directions", "must be positive"));
        }
        if self.derivcheck.steps.is_empty() || self.derivcheck.steps.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(ConfigError::new("derivcheck.steps", "must be a nonempty list of positive steps"));
        }
        if self.counterexample.ts.is_empty() || self.counterexample.ts.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(ConfigError::new("counterexample.ts", "must be a nonempty list of points in (0, 1]"));
        }
        if !(self.counterexample.tol > 0.0) {
            return Err(ConfigError::new("counterexample.tol", "must be positive"));
        }
        Ok(self)
    }
}
