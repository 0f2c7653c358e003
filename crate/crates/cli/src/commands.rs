use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use stablab::numerics::DenseSym;
use stablab::scalarization::{greedy_select, MeasurementSet, SelectError};
use stablab::stability::{
    analytic_control, attach_finite, fit_holder, flat_counterexample, injectivity_probe, read_records,
    rng_for, sample_at, sweep as run_sweep, write_records, CellParams, ForwardModel, HolderFit,
    StabilityError, SweepConfig, SweepOutput,
};

use crate::config::{self, ConfigError, ExperimentConfig, LoadedConfig, Model};

/// Stream offset for derivative-check directions.
const DERIVCHECK_STREAM: u64 = 1 << 41;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical { name: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Numerical { name, message } => write!(f, "{name}: {message}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        CliError::Numerical {
            name: e.name(),
            message: e.to_string(),
        }
    }
}

impl From<stablab::operator::ForwardError> for CliError {
    fn from(e: stablab::operator::ForwardError) -> Self {
        CliError::Numerical {
            name: e.name(),
            message: e.to_string(),
        }
    }
}

fn header(hash: &str, seed: &str) -> String {
    format!("# stablab {} config={hash} seed={seed}\n", env!("CARGO_PKG_VERSION"))
}

fn write_output(path: &Path, header: &str, body: &[u8]) -> Result<(), CliError> {
    let mut bytes = header.as_bytes().to_vec();
    bytes.extend_from_slice(body);
    fs::write(path, bytes)
        .map_err(|e| CliError::Config(ConfigError::new(path.display().to_string(), format!("cannot write: {e}"))))
}

struct Context {
    config: ExperimentConfig,
    header: String,
}

impl Context {
    fn load(path: &Path) -> Result<Self, CliError> {
        let LoadedConfig { config, hash } = config::load(path)?;
        let header = header(&hash, &config.seed.to_string());
        Ok(Self { config, header })
    }

    fn out(&self, flag: Option<PathBuf>, name: &str) -> PathBuf {
        flag.unwrap_or_else(|| self.config.output_path(name))
    }
}

fn matrix_csv(m: &DenseSym) -> String {
    let mut s = String::new();
    for i in 0..m.dim() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn mesh(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let mesh = ctx.config.build_mesh()?;
    let path = ctx.out(out, &ctx.config.output.mesh);
    write_output(&path, &ctx.header, mesh.to_text().as_bytes())?;
    println!(
        "nodes={} triangles={} cells={} patch_edges={}",
        mesh.n_nodes(),
        mesh.triangles().len(),
        mesh.n_cells(),
        mesh.patch_edges().count()
    );
    Ok(())
}

fn forward_matrix<M: ForwardModel>(model: &M, cfg: &ExperimentConfig) -> Result<DenseSym, CliError> {
    let p: M::Params = sample_at(&cfg.compact_set(), cfg.seed, cfg.forward.sample_index);
    Ok(model.operator(&p)?.matrix().clone())
}

pub fn forward(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let matrix = match ctx.config.model()? {
        Model::Conductivity(m) => forward_matrix(&m, &ctx.config)?,
        Model::Elasticity(m) => forward_matrix(&m, &ctx.config)?,
    };
    let path = ctx.out(out, &ctx.config.output.operator);
    write_output(&path, &ctx.header, matrix_csv(&matrix).as_bytes())?;
    println!("dim={}", matrix.dim());
    Ok(())
}

fn derivcheck_rows<M: ForwardModel>(model: &M, cfg: &ExperimentConfig) -> Result<String, CliError> {
    let spec = cfg.compact_set();
    let mut body = String::from("direction,h,rel_error\n");
    for d in 0..cfg.derivcheck.n_directions as u64 {
        let p: M::Params = sample_at(&spec, cfg.seed, d);
        let dp = M::Params::unit_direction(spec.n_cells, &mut rng_for(cfg.seed, DERIVCHECK_STREAM + d));
        let exact = model.derivative(&p, &dp)?;
        let errors = cfg
            .derivcheck
            .steps
            .par_iter()
            .map(|&h| {
                let plus = model.operator(&p.perturbed(h, &dp))?;
                let minus = model.operator(&p.perturbed(-h, &dp))?;
                let fd = plus.matrix().sub(minus.matrix()).map_err(stablab::operator::ForwardError::from)?;
                let diff = fd.scaled(0.5 / h).sub(&exact).map_err(stablab::operator::ForwardError::from)?;
                Ok(diff.max_abs() / exact.max_abs())
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        for (h, e) in cfg.derivcheck.steps.iter().zip(errors) {
            body.push_str(&format!("{d},{h:e},{e:e}\n"));
        }
    }
    Ok(body)
}

pub fn derivcheck(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let body = match ctx.config.model()? {
        Model::Conductivity(m) => derivcheck_rows(&m, &ctx.config)?,
        Model::Elasticity(m) => derivcheck_rows(&m, &ctx.config)?,
    };
    let path = ctx.out(out, &ctx.config.output.derivcheck);
    write_output(&path, &ctx.header, body.as_bytes())?;
    print!("{}", body);
    Ok(())
}

fn sweep_config(cfg: &ExperimentConfig) -> SweepConfig {
    SweepConfig {
        n_random_pairs: cfg.sweep.n_random_pairs,
        n_rays: cfg.sweep.n_rays,
        ray_steps: cfg.sweep.ray_steps,
        seed: cfg.seed,
        probe_k: cfg.probe_k(),
    }
}

fn run_configured_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, CliError> {
    let (spec, rq, sc) = (cfg.compact_set(), cfg.recovered(), sweep_config(cfg));
    Ok(match cfg.model()? {
        Model::Conductivity(m) => run_sweep(&m, &spec, &rq, &sc)?,
        Model::Elasticity(m) => run_sweep(&m, &spec, &rq, &sc)?,
    })
}

fn records_bytes(out: &SweepOutput) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_records(&mut buf, &out.records)?;
    Ok(buf)
}

fn report_sweep(out: &SweepOutput) {
    let probe = injectivity_probe(&out.records, 1e-8, 1.0);
    println!(
        "records={} dropped={} injectivity_candidates={}",
        out.records.len(),
        out.dropped.len(),
        probe.candidates.len()
    );
    for d in &out.dropped {
        eprintln!("dropped pair {}: {}", d.pair_id, d.reason);
    }
}

pub fn sweep(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let result = run_configured_sweep(&ctx.config)?;
    let path = ctx.out(out, &ctx.config.output.records);
    write_output(&path, &ctx.header, &records_bytes(&result)?)?;
    report_sweep(&result);
    Ok(())
}

fn fit_json(fit: &HolderFit) -> String {
    let mut s = serde_json::to_string_pretty(fit).expect("fit serializes");
    s.push('\n');
    s
}

pub fn fit(
    records: &Path,
    config: Option<&Path>,
    out: Option<PathBuf>,
    finite: bool,
    n_bins: Option<usize>,
    slack: Option<f64>,
) -> Result<(), CliError> {
    let (cfg, head) = match config {
        Some(p) => {
            let ctx = Context::load(p)?;
            (Some(ctx.config), ctx.header)
        }
        None => (None, header("none", "none")),
    };
    let n_bins = n_bins.or(cfg.as_ref().map(|c| c.fit.n_bins)).unwrap_or(10);
    let slack = slack.or(cfg.as_ref().map(|c| c.fit.slack)).unwrap_or(0.1);
    let file = fs::File::open(records)
        .map_err(|e| ConfigError::new(records.display().to_string(), format!("cannot read records: {e}")))?;
    let recs = read_records(file)?;
    let points: Vec<(f64, f64)> = if finite {
        recs.iter()
            .map(|r| {
                r.delta_finite.map(|f| (f, r.delta_r)).ok_or_else(|| {
                    ConfigError::new(records.display().to_string(), format!("pair {} has no delta_finite", r.pair_id))
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        recs.iter().map(|r| (r.delta_f, r.delta_r)).collect()
    };
    let result = fit_holder(&points, n_bins, slack)?;
    let json = fit_json(&result);
    let path = out.unwrap_or_else(|| match &cfg {
        Some(c) => c.output_path(&c.output.fit),
        None => PathBuf::from("fit.json"),
    });
    write_output(&path, &head, json.as_bytes())?;
    print!("{json}");
    Ok(())
}

pub fn select(config: &Path, out: Option<PathBuf>, records_out: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let cfg = &ctx.config;
    let mut result = run_configured_sweep(cfg)?;
    report_sweep(&result);
    let candidates = MeasurementSet::upper_pairs(cfg.probe_k()).pairs().to_vec();
    let selection = match greedy_select(&result.operators, &candidates, cfg.select.target_ratio, cfg.max_size()) {
        Ok(s) => s,
        Err(SelectError::CannotReachRatio(s)) => {
            return Err(CliError::Numerical {
                name: "CannotReachRatio",
                message: format!(
                    "target {} not reached; best ratio {} with {} measurements",
                    cfg.select.target_ratio,
                    s.ratio,
                    s.set.len()
                ),
            })
        }
        Err(SelectError::Invalid(e)) => {
            return Err(CliError::Numerical {
                name: "ScalarError",
                message: e.to_string(),
            })
        }
    };
    let path = ctx.out(out, &cfg.output.selection);
    let body = format!("# achieved_ratio={:e}\n{}", selection.ratio, selection.set.to_csv());
    write_output(&path, &ctx.header, body.as_bytes())?;
    println!("measurements={} ratio={}", selection.set.len(), selection.ratio);
    if let Some(rp) = records_out {
        attach_finite(&mut result, &selection.set)?;
        write_output(&rp, &ctx.header, &records_bytes(&result)?)?;
    }
    Ok(())
}

pub fn counterexample(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = Context::load(config)?;
    let cfg = &ctx.config;
    let flat = flat_counterexample(&cfg.counterexample.ts, cfg.counterexample.tol)?;
    let control = analytic_control(&cfg.counterexample.ts, cfg.fit.n_bins, cfg.fit.slack)?;
    let mut body = String::from("map,t,F_t,local_slope\n");
    for (name, samples) in [("flat", &flat), ("cubic", &control.samples)] {
        for s in samples.iter() {
            body.push_str(&format!("{name},{:e},{:e},{:e}\n", s.t, s.f_t, s.local_slope));
        }
    }
    let path = ctx.out(out, &cfg.output.counterexample);
    write_output(&path, &ctx.header, body.as_bytes())?;
    let max_slope = |v: &[stablab::stability::FlatMapSample]| v.iter().map(|s| s.local_slope).fold(f64::MIN, f64::max);
    println!(
        "flat_max_slope={} cubic_max_slope={} cubic_toy_theta={}",
        max_slope(&flat),
        max_slope(&control.samples),
        control.fit.theta
    );
    Ok(())
}

pub fn validate(config: &Path) -> Result<(), CliError> {
    let LoadedConfig { config, hash } = config::load(config)?;
    let text = toml::to_string(&config)
        .map_err(|e| ConfigError::new("config", format!("cannot normalize: {e}")))?;
    println!("# config={hash}");
    print!("{text}");
    Ok(())
}
