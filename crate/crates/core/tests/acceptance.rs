//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use stablab::conductivity::{current_basis, nd_derivative, nd_matrix, nd_solve, ConductivityParams};
use stablab::elasticity::{displacement_basis, dn_derivative, dn_matrix, dn_solve, ElasticityParams, Lift};
use stablab::mesh::{build_mesh, Mesh, PartitionSpec, PatchSpec, Side};
use stablab::numerics::{eig_min, spectral_norm, DenseSym};
use stablab::operator::{operator_distance, DataOperator};
use stablab::scalarization::{greedy_select, phi, probe_weights, MeasurementSet};
use stablab::stability::{
    analytic_control, attach_finite, cubic_toy_points, fit_holder, flat_counterexample, flat_map,
    injectivity_probe, rng_for, sample_params, sweep, write_records, CellParams, CompactSetSpec,
    ConductivityModel, ForwardModel, ProblemKind, RecoveredQuantity, SweepConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mesh(n_sub: usize, cols: usize, rows: usize) -> Mesh {
    build_mesh(n_sub, PartitionSpec::new(cols, rows).unwrap(), PatchSpec::full(Side::Bottom)).unwrap()
}

fn raw_rel_asym(raw: &[f64], k: usize) -> f64 {
    let scale = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0_f64;
    for i in 0..k {
        for j in 0..k {
            worst = worst.max((raw[i * k + j] - raw[j * k + i]).abs());
        }
    }
    worst / scale
}

fn rel_max_diff(a: &DenseSym, b: &DenseSym) -> f64 {
    a.sub(b).unwrap().max_abs() / b.max_abs()
}

fn spec(kind: ProblemKind, n_cells: usize) -> CompactSetSpec {
    CompactSetSpec::new(0.5, 2.0, n_cells, kind).unwrap()
}

fn scaling() -> Outcome {
    let mut worst = 0.0_f64;
    for n_sub in [4, 8] {
        let m = mesh(n_sub, 2, 2);
        let cb = current_basis(&m).unwrap();
        let db = displacement_basis(&m).unwrap();
        let cs: Vec<ConductivityParams> = sample_params(&spec(ProblemKind::Conductivity, 4), 3, 101);
        let es: Vec<ElasticityParams> = sample_params(&spec(ProblemKind::Elasticity, 4), 3, 102);
        for t in [0.5, 2.0, 10.0] {
            for p in &cs {
                let base = nd_matrix(&m, p, &cb).unwrap();
                let scaled = nd_matrix(&m, &p.scaled(t), &cb).unwrap();
                worst = worst.max(rel_max_diff(scaled.matrix(), &base.matrix().scaled(1.0 / t)));
            }
            for c in &es {
                let base = dn_matrix(&m, c, &db).unwrap();
                let scaled = dn_matrix(&m, &c.scaled(t), &db).unwrap();
                worst = worst.max(rel_max_diff(scaled.matrix(), &base.matrix().scaled(t)));
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max relative entry error {worst:e}"))?;
    Ok(format!("max relative entry error {worst:.2e}"))
}

fn structure() -> Outcome {
    let m = mesh(8, 2, 2);
    let cb = current_basis(&m).unwrap();
    let db = displacement_basis(&m).unwrap();
    let (mut asym, mut neg) = (0.0_f64, f64::INFINITY);
    for p in sample_params::<ConductivityParams>(&spec(ProblemKind::Conductivity, 4), 50, 201) {
        let s = nd_solve(&m, &p, &cb).unwrap();
        asym = asym.max(raw_rel_asym(&s.raw_pairings, cb.dim()));
        let a = s.operator.matrix();
        neg = neg.min(eig_min(a) / spectral_norm(a));
    }
    for c in sample_params::<ElasticityParams>(&spec(ProblemKind::Elasticity, 4), 50, 202) {
        let s = dn_solve(&m, &c, &db, &Lift::ZeroExtension).unwrap();
        asym = asym.max(raw_rel_asym(&s.raw_pairings, db.dim()));
        let a = s.operator.matrix();
        neg = neg.min(eig_min(a) / spectral_norm(a));
    }
    ensure(asym <= 1e-12, || format!("relative asymmetry {asym:e}"))?;
    ensure(neg >= -1e-10, || format!("eig_min/norm {neg:e}"))?;
    Ok(format!("asymmetry {asym:.2e}, min eig_min/norm {neg:.2e}"))
}

fn fd_errors(eval: impl Fn(f64) -> DenseSym, exact: &DenseSym) -> [f64; 3] {
    [1e-3, 1e-4, 1e-5].map(|h| {
        let fd = eval(h).sub(&eval(-h)).unwrap().scaled(0.5 / h);
        fd.sub(exact).unwrap().max_abs() / exact.max_abs()
    })
}

fn derivatives() -> Outcome {
    let m = mesh(8, 2, 2);
    let cb = current_basis(&m).unwrap();
    let db = displacement_basis(&m).unwrap();
    let mut report = Vec::new();
    let mut radial = 0.0_f64;
    for i in 0..3u64 {
        let p: ConductivityParams = stablab::stability::sample_at(&spec(ProblemKind::Conductivity, 4), 301, i);
        let dp = ConductivityParams::unit_direction(4, &mut rng_for(301, 1000 + i));
        let exact = nd_derivative(&m, &p, &dp, &cb).unwrap();
        report.push(fd_errors(|h| nd_matrix(&m, &p.axpy(h, &dp), &cb).unwrap().matrix().clone(), &exact));
        let r = nd_derivative(&m, &p, &p, &cb).unwrap();
        radial = radial.max(rel_max_diff(&r, &nd_matrix(&m, &p, &cb).unwrap().matrix().scaled(-1.0)));

        let c: ElasticityParams = stablab::stability::sample_at(&spec(ProblemKind::Elasticity, 4), 302, i);
        let dc = ElasticityParams::unit_direction(4, &mut rng_for(302, 1000 + i));
        let exact = dn_derivative(&m, &c, &dc, &db).unwrap();
        report.push(fd_errors(|h| dn_matrix(&m, &c.axpy(h, &dc), &db).unwrap().matrix().clone(), &exact));
        let r = dn_derivative(&m, &c, &c, &db).unwrap();
        radial = radial.max(rel_max_diff(&r, dn_matrix(&m, &c, &db).unwrap().matrix()));
    }
    let at_1e4 = report.iter().map(|e| e[1]).fold(0.0, f64::max);
    let min_ratio = report.iter().map(|e| e[0] / e[1]).fold(f64::INFINITY, f64::min);
    let worst_1e5 = report.iter().map(|e| e[2]).fold(0.0, f64::max);
    ensure(at_1e4 <= 1e-5, || format!("relative error at h=1e-4 {at_1e4:e}"))?;
    // O(h²): a tenfold smaller step cuts the error about a hundredfold until roundoff
    ensure(min_ratio >= 50.0, || format!("err(1e-3)/err(1e-4) only {min_ratio:.1}"))?;
    ensure(worst_1e5 <= 1e-5, || format!("relative error at h=1e-5 {worst_1e5:e}"))?;
    ensure(radial <= 1e-10, || format!("radial identity error {radial:e}"))?;
    Ok(format!(
        "err@1e-4 {at_1e4:.2e}, min err ratio 1e-3/1e-4 {min_ratio:.1}, err@1e-5 {worst_1e5:.2e}, radial {radial:.2e}"
    ))
}

fn faithfulness() -> Outcome {
    let m = mesh(8, 2, 2);
    let cb = current_basis(&m).unwrap();
    let db = displacement_basis(&m).unwrap();
    let mut pairs: Vec<(DataOperator, DataOperator)> = Vec::new();
    let cs: Vec<ConductivityParams> = sample_params(&spec(ProblemKind::Conductivity, 4), 110, 401);
    let es: Vec<ElasticityParams> = sample_params(&spec(ProblemKind::Elasticity, 4), 110, 402);
    for j in 0..50 {
        pairs.push((nd_matrix(&m, &cs[2 * j], &cb).unwrap(), nd_matrix(&m, &cs[2 * j + 1], &cb).unwrap()));
        pairs.push((dn_matrix(&m, &es[2 * j], &db).unwrap(), dn_matrix(&m, &es[2 * j + 1], &db).unwrap()));
    }
    for j in 0..5 {
        let a = nd_matrix(&m, &cs[100 + j], &cb).unwrap();
        let b = nd_matrix(&m, &cs[100 + j], &cb).unwrap();
        pairs.push((a, b));
        let a = dn_matrix(&m, &es[100 + j], &db).unwrap();
        let b = dn_matrix(&m, &es[100 + j], &db).unwrap();
        pairs.push((a, b));
    }
    let (mut zeros, mut max_bound_ratio) = (0, 0.0_f64);
    for (a, b) in &pairs {
        let w = probe_weights(a.dim()).unwrap();
        let f = phi(a, b, &w).unwrap();
        let d = operator_distance(a, b).unwrap();
        ensure((f == 0.0) == (d == 0.0), || format!("phi {f:e} vs distance {d:e}"))?;
        if d == 0.0 {
            zeros += 1;
            continue;
        }
        let bound = w.sum_squares().powi(2) * d * d;
        ensure(f <= bound, || format!("phi {f:e} exceeds bound {bound:e}"))?;
        max_bound_ratio = max_bound_ratio.max(f / bound);
    }
    ensure(zeros == 10, || format!("{zeros} exact-equality pairs, expected 10"))?;
    Ok(format!("{} pairs, {zeros} zero, max phi/bound {max_bound_ratio:.3}", pairs.len()))
}

fn fit_calibration() -> Outcome {
    let start = Instant::now();
    let exact: Vec<(f64, f64)> = (0..400)
        .map(|i| {
            let f = 10f64.powf(-10.0 + 10.0 * i as f64 / 399.0);
            (f, f.sqrt())
        })
        .collect();
    let fit = fit_holder(&exact, 10, 0.1).map_err(|e| e.to_string())?;
    ensure((fit.theta - 0.5).abs() <= 1e-6, || format!("exact-law theta {}", fit.theta))?;

    let toy = cubic_toy_points(141);
    // brute-force oracle: |p − q| ≤ (4|p³ − q³|)^{1/3} on every pair, tight at q = −p
    let oracle = toy.iter().map(|&(f, r)| r / (4.0 * f).cbrt()).fold(0.0, f64::max);
    ensure((oracle - 1.0).abs() <= 1e-12, || format!("oracle ratio {oracle}"))?;
    let cubic = fit_holder(&toy, 10, 0.1).map_err(|e| e.to_string())?;
    ensure((0.30..=0.37).contains(&cubic.theta), || format!("cubic theta {}", cubic.theta))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("exact theta {:.9}, cubic theta {:.4} ({} pairs)", fit.theta, cubic.theta, toy.len()))
}

fn composite_simpson(t: f64, panels: usize) -> f64 {
    let rho = |s: f64| if s == 0.0 { 0.0 } else { (-1.0 / (s * s)).exp() };
    let h = t / panels as f64;
    let mut acc = rho(0.0) + rho(t);
    for i in 1..panels {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * rho(i as f64 * h);
    }
    acc * h / 3.0
}

fn counterexample() -> Outcome {
    let ts: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
    let flat = flat_counterexample(&ts, 1e-10).map_err(|e| e.to_string())?;
    for s in &flat {
        let bound = s.t * (-1.0 / (s.t * s.t)).exp();
        ensure(s.f_t > 0.0 && s.f_t <= bound, || format!("F({}) = {:e} vs bound {bound:e}", s.t, s.f_t))?;
    }
    let at = flat.iter().find(|s| (s.t - 0.1).abs() < 1e-12).unwrap();
    let eta = 1e-3;
    let oracle = (composite_simpson(0.1 * (1.0 + eta), 400_000).ln()
        - composite_simpson(0.1 * (1.0 - eta), 400_000).ln())
        / ((1.0 + eta).ln() - (1.0 - eta).ln());
    ensure(at.local_slope > 100.0, || format!("slope at 0.1 is {}", at.local_slope))?;
    ensure((at.local_slope - oracle).abs() <= 1e-3 * oracle, || {
        format!("slope {} disagrees with composite oracle {oracle}", at.local_slope)
    })?;
    ensure(flat_map(0.1, 1e-10).unwrap() > 0.0, || "F(0.1) not positive".into())?;

    let control = analytic_control(&ts, 10, 0.1).map_err(|e| e.to_string())?;
    let dev = control.samples.iter().map(|s| (s.local_slope - 3.0).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-10, || format!("t³ slope deviation {dev:e}"))?;
    Ok(format!("flat slope at 0.1 = {:.2} (oracle {oracle:.2}), t³ slope deviation {dev:.1e}", at.local_slope))
}

struct Pipeline {
    theta_full: f64,
    theta_finite: f64,
    ratio: f64,
    measurements: usize,
    k: usize,
    records_csv: Vec<u8>,
    selection_csv: String,
    summary: String,
}

fn pipeline() -> Result<Pipeline, String> {
    let model = ConductivityModel::new(mesh(16, 2, 1)).map_err(|e| e.to_string())?;
    let k = model.basis_dim();
    let cfg = SweepConfig {
        n_random_pairs: 200,
        n_rays: 20,
        ray_steps: 20,
        seed: 7,
        probe_k: k,
    };
    let mut out = sweep(&model, &spec(ProblemKind::Conductivity, 2), &RecoveredQuantity::all(2), &cfg)
        .map_err(|e| e.to_string())?;
    ensure(out.dropped.is_empty(), || format!("{} pairs dropped", out.dropped.len()))?;
    let probe = injectivity_probe(&out.records, 1e-8, 1.0);
    ensure(probe.passed(), || format!("injectivity candidates {:?}", probe.candidates))?;
    let full = fit_holder(&out.points(), 10, 0.1).map_err(|e| e.to_string())?;
    let violations = out
        .records
        .iter()
        .filter(|r| r.delta_r > full.envelope(r.delta_f) * full.slack.exp())
        .count();
    ensure(full.theta > 0.05, || format!("theta {}", full.theta))?;
    ensure(violations == 0 && full.max_violation <= full.slack, || {
        format!("{violations} envelope violations, max {}", full.max_violation)
    })?;
    let summary = format!(
        "{} records, theta {:.4} (precap {:.4}), max violation {:.3}",
        out.records.len(),
        full.theta,
        full.theta_precap,
        full.max_violation
    );

    let candidates = MeasurementSet::upper_pairs(k).pairs().to_vec();
    let selection = match greedy_select(&out.operators, &candidates, 0.5, k * (k + 1) / 2) {
        Ok(s) => s,
        Err(e) => return Err(format!("selection: {e}")),
    };
    attach_finite(&mut out, &selection.set).map_err(|e| e.to_string())?;
    let finite_points: Vec<(f64, f64)> =
        out.records.iter().map(|r| (r.delta_finite.unwrap(), r.delta_r)).collect();
    let finite = fit_holder(&finite_points, 10, 0.1).map_err(|e| e.to_string())?;
    let mut records_csv = Vec::new();
    write_records(&mut records_csv, &out.records).map_err(|e| e.to_string())?;
    Ok(Pipeline {
        theta_full: full.theta,
        theta_finite: finite.theta,
        ratio: selection.ratio,
        measurements: selection.set.len(),
        k,
        records_csv,
        selection_csv: selection.set.to_csv(),
        summary,
    })
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn sweep_criterion() -> Outcome {
    let start = Instant::now();
    let p = with_threads(1, pipeline)?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("{}, {:.1}s single-threaded", p.summary, elapsed.as_secs_f64()))
}

fn finite_criterion() -> Outcome {
    let p = pipeline()?;
    ensure(p.ratio >= 0.5, || format!("ratio {}", p.ratio))?;
    ensure(p.measurements <= p.k * (p.k + 1) / 2, || format!("{} measurements", p.measurements))?;
    ensure(p.theta_finite >= 0.8 * p.theta_full, || {
        format!("theta_finite {} < 0.8·{}", p.theta_finite, p.theta_full)
    })?;
    Ok(format!(
        "ratio {:.3} with M = {} (k = {}), theta_finite {:.4} vs theta_full {:.4}",
        p.ratio, p.measurements, p.k, p.theta_finite, p.theta_full
    ))
}

fn determinism() -> Outcome {
    let a = with_threads(1, pipeline)?;
    let b = with_threads(4, pipeline)?;
    let c = with_threads(4, pipeline)?;
    ensure(a.records_csv == b.records_csv && b.records_csv == c.records_csv, || "records CSV differs".into())?;
    ensure(a.selection_csv == b.selection_csv && b.selection_csv == c.selection_csv, || {
        "selection CSV differs".into()
    })?;
    Ok(format!("{} record bytes identical at 1 and 4 threads", a.records_csv.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 scaling identities", scaling),
        ("2 symmetry and positivity", structure),
        ("3 derivatives", derivatives),
        ("4 faithfulness", faithfulness),
        ("5 fit calibration", fit_calibration),
        ("6 flat counterexample", counterexample),
        ("7 conductivity stability sweep", sweep_criterion),
        ("8 finite measurements", finite_criterion),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
