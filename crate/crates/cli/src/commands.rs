use degenerate_control::fields::{norm_c_l2, norm_l2_h1a, norm_l2_space, total_mass};
use degenerate_control::optimizer::{certify, optimize, random_direction, OptimizationResult};
use degenerate_control::reduced::{cost, terminal_mismatch, ActiveSetReport, SscReport};
use degenerate_control::solvers::solve_state;
use degenerate_control::verification::{
    check_max_principles, convergence_study, gradient_check, hessian_check, lipschitz_probe, StudyProblem,
};
use degenerate_control::{ControlField, ControlRegion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::artifacts::OutputDir;
use crate::config::{with_parameter, ControlSpec, FieldSpec, Problem, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    NotConverged,
    VerificationFailed,
}

#[derive(Serialize)]
struct Norms {
    sup: f64,
    min: f64,
    max: f64,
    c_l2: f64,
    l2_h1a: f64,
    terminal_l2: f64,
}

#[derive(Serialize)]
struct MassReport {
    initial: f64,
    terminal: f64,
    max_relative_drift: f64,
    control_is_zero: bool,
}

#[derive(Serialize)]
struct Bounds {
    control_sup: f64,
    y0_sup: f64,
    /// e^{(‖v‖_∞+1)T}‖y⁰‖_∞
    sup_bound: f64,
    within_sup_bound: bool,
    /// `Some` when y⁰ is nonnegative.
    nonnegative: Option<bool>,
}

#[derive(Serialize)]
struct UniformMode {
    lambda: f64,
    initial: f64,
    closed_form: f64,
    relative_deviation: f64,
}

#[derive(Serialize)]
struct SolveSummary {
    n_cells: usize,
    n_nodes: usize,
    n_control_nodes: usize,
    n_steps: usize,
    dt: f64,
    mesh_warnings: Vec<String>,
    norms: Norms,
    mass: MassReport,
    bounds: Bounds,
    uniform_mode: Option<UniformMode>,
    cost: f64,
}

fn constant_value(values: &[f64]) -> Option<f64> {
    let first = *values.first()?;
    values.iter().all(|&v| v == first).then_some(first)
}

pub fn solve(cfg: &RunConfig, out: &OutputDir) -> Result<Outcome, CliError> {
    let Problem { spec, ops, control, opts } = Problem::build(cfg, false)?;
    let y = solve_state(&spec, &ops, &control, &opts)?;
    let time = &spec.time;

    let m0 = total_mass(&y.values[0], &ops);
    let drift = y
        .values
        .iter()
        .map(|l| {
            let d = (total_mass(l, &ops) - m0).abs();
            if m0 == 0.0 { d } else { d / m0.abs() }
        })
        .fold(0.0, f64::max);

    let v_sup = control.max_abs();
    let sup_bound = ((v_sup + 1.0) * time.horizon).exp() * spec.y0_sup();
    let nonnegative = spec.y0.iter().all(|&v| v >= 0.0).then(|| y.min() >= -1e-12);

    let all_flat: Vec<f64> = control.iter().copied().collect();
    let uniform_mode = match (constant_value(&all_flat), constant_value(&spec.y0)) {
        (Some(lambda), Some(c0)) if ops.n_control() == ops.n_nodes() && opts.shift_r == 0.0 => {
            let th = opts.theta;
            let dt = time.dt();
            let factor = (1.0 + (1.0 - th) * dt * lambda) / (1.0 - th * dt * lambda);
            let closed_form = c0 * factor.powi(time.n_steps as i32);
            let observed = y.last().iter().fold(0.0_f64, |m, &v| m.max((v - closed_form).abs()));
            let relative_deviation = if closed_form == 0.0 { observed } else { observed / closed_form.abs() };
            Some(UniformMode { lambda, initial: c0, closed_form, relative_deviation })
        }
        _ => None,
    };

    let summary = SolveSummary {
        n_cells: ops.mesh.n_cells(),
        n_nodes: ops.n_nodes(),
        n_control_nodes: ops.n_control(),
        n_steps: time.n_steps,
        dt: time.dt(),
        mesh_warnings: ops.warnings.clone(),
        norms: Norms {
            sup: y.max_abs(),
            min: y.min(),
            max: y.max(),
            c_l2: norm_c_l2(&y, &ops)?,
            l2_h1a: norm_l2_h1a(&y, &ops, time)?,
            terminal_l2: norm_l2_space(y.last(), &ops)?,
        },
        mass: MassReport {
            initial: m0,
            terminal: total_mass(y.last(), &ops),
            max_relative_drift: drift,
            control_is_zero: v_sup == 0.0,
        },
        bounds: Bounds {
            control_sup: v_sup,
            y0_sup: spec.y0_sup(),
            sup_bound,
            within_sup_bound: y.max_abs() <= sup_bound,
            nonnegative,
        },
        uniform_mode,
        cost: cost(&spec, &ops, &control, &y)?,
    };
    y.write_csv(out.csv("state.csv")?, &ops, time)?;
    out.json("summary.json", "solve", &summary)?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct ActiveCounts {
    tau: f64,
    lower_active: usize,
    upper_active: usize,
    inactive: usize,
}

impl From<&ActiveSetReport> for ActiveCounts {
    fn from(r: &ActiveSetReport) -> Self {
        ActiveCounts { tau: r.tau, lower_active: r.lower_active, upper_active: r.upper_active, inactive: r.inactive }
    }
}

#[derive(Serialize)]
struct OptimizeReport {
    converged: bool,
    stalled: bool,
    iterations: usize,
    continuation_stages: usize,
    final_cost: f64,
    final_residual: f64,
    stationarity_tol: f64,
    terminal_misfit: f64,
    ssc: SscReport,
    active_set: ActiveCounts,
    certification: Option<Value>,
    certified: Option<bool>,
}

/// Optimizes and certifies one configuration without writing anything.
fn run_optimization(cfg: &RunConfig) -> Result<(Problem, OptimizationResult, OptimizeReport), CliError> {
    let p = Problem::build(cfg, true)?;
    let res = optimize(&p.spec, &p.ops, &p.control, &cfg.optimizer, &p.opts)?;
    let (certification, certified) = if res.converged {
        let c = certify(&p.spec, &p.ops, &res, &cfg.certify, &p.opts)?;
        (Some(serde_json::to_value(&c)?), Some(c.passed()))
    } else {
        (None, None)
    };
    let report = OptimizeReport {
        converged: res.converged,
        stalled: res.stalled,
        iterations: res.iterations,
        continuation_stages: res.continuation_stages,
        final_cost: res.final_cost(),
        final_residual: res.final_residual(),
        stationarity_tol: cfg.optimizer.stationarity_tol,
        terminal_misfit: norm_l2_space(&terminal_mismatch(&p.spec, &res.state), &p.ops)?,
        ssc: res.ssc.clone(),
        active_set: (&res.active_set).into(),
        certification,
        certified,
    };
    Ok((p, res, report))
}

pub fn optimize_cmd(cfg: &RunConfig, out: &OutputDir, dump: bool) -> Result<Outcome, CliError> {
    let (p, res, report) = run_optimization(cfg)?;
    let time = &p.spec.time;
    {
        use std::io::Write;
        let mut w = out.csv("iterations.csv")?;
        writeln!(w, "iter,cost,increment,residual,step")?;
        for r in &res.history {
            writeln!(w, "{},{:e},{:e},{:e},{:e}", r.iter, r.cost, r.increment, r.residual, r.step)?;
        }
        w.flush()?;
    }
    res.control.write_csv(out.csv("control.csv")?, &p.ops, time)?;
    if dump {
        res.state.write_csv(out.csv("state.csv")?, &p.ops, time)?;
        res.adjoint.write_csv(out.csv("adjoint.csv")?, &p.ops, time)?;
    }
    out.json("certification.json", "optimize", &report)?;
    Ok(if res.converged { Outcome::Ok } else { Outcome::NotConverged })
}

pub const SUITES: [&str; 5] = ["max_principle", "gradient", "hessian", "lipschitz", "convergence"];

#[derive(Serialize)]
struct CheckEntry {
    name: String,
    passed: bool,
    report: Value,
}

#[derive(Serialize)]
struct VerifyReport {
    suite: String,
    passed: bool,
    checks: Vec<CheckEntry>,
}

/// Random directions scaled so that `u ± ε_max w` stays in the box.
fn interior_directions(
    p: &Problem,
    count: usize,
    eps_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ControlField>, CliError> {
    let u = &p.control;
    let slack = u.iter().map(|&v| (v - p.spec.lower).min(p.spec.upper - v)).fold(f64::INFINITY, f64::min);
    if !(slack > 0.0) {
        return Err(CliError::Config(
            "derivative checks need a control strictly inside the box".into(),
        ));
    }
    Ok((0..count)
        .map(|_| {
            let d = random_direction(u, rng);
            let scale = 0.9 * slack / (eps_max * d.max_abs().max(f64::MIN_POSITIVE));
            d.map(|v| v * scale)
        })
        .collect())
}

fn entry<T: Serialize>(name: &str, passed: bool, report: &T) -> Result<CheckEntry, CliError> {
    Ok(CheckEntry { name: name.into(), passed, report: serde_json::to_value(report)? })
}

fn run_suite(cfg: &RunConfig, p: &Problem, suite: &str) -> Result<Vec<CheckEntry>, CliError> {
    let v = &cfg.verify;
    let (spec, ops, opts) = (&p.spec, &p.ops, &p.opts);
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let mut out = Vec::new();
    match suite {
        "max_principle" => {
            let r = check_max_principles(spec, ops, v.max_principle_runs, v.seed, opts)?;
            out.push(entry("max_principle", r.passed, &r)?);
        }
        "gradient" => {
            let eps_max = v.gradient_eps.iter().copied().fold(0.0, f64::max);
            let zero = p.control.like(0.0);
            let r = gradient_check(spec, ops, &p.control, &zero, &v.gradient_eps, opts)?;
            let zero_ok = r.relative_errors.iter().all(|&e| e == 0.0);
            out.push(entry("gradient_zero_direction", zero_ok && r.passed, &r)?);
            for (k, w) in interior_directions(p, v.gradient_pairs, eps_max, &mut rng)?.iter().enumerate() {
                let r = gradient_check(spec, ops, &p.control, w, &v.gradient_eps, opts)?;
                out.push(entry(&format!("gradient_{k}"), r.passed, &r)?);
            }
        }
        "hessian" => {
            let eps_max = v.hessian_eps.iter().copied().fold(0.0, f64::max);
            let dirs = interior_directions(p, v.hessian_directions, eps_max, &mut rng)?;
            let r = hessian_check(spec, ops, &p.control, &dirs, &v.hessian_eps, opts)?;
            out.push(entry("hessian", r.passed, &r)?);
        }
        "lipschitz" => {
            let r = lipschitz_probe(spec, ops, v.lipschitz_pairs, v.seed, opts)?;
            out.push(entry("lipschitz", r.passed, &r)?);
        }
        "convergence" => {
            let pc = &cfg.problem;
            let Some(initial) = pc.y0.function() else {
                return Err(CliError::Config("convergence suite needs an analytic y0 profile".into()));
            };
            if matches!(pc.control, ControlSpec::Random) {
                return Err(CliError::Config("convergence suite needs a deterministic control profile".into()));
            }
            let control = |t: f64, x: f64| pc.control.eval(t, x, pc.horizon).unwrap_or(f64::NAN);
            let whole = pc.omega == ControlRegion::whole_domain();
            let exact_fn = match (&pc.y0, &pc.control) {
                (FieldSpec::Constant { value: c0 }, ControlSpec::Constant { value: lambda }) if whole => {
                    let (c0, lambda) = (*c0, *lambda);
                    Some(move |t: f64, _: f64| c0 * (lambda * t).exp())
                }
                _ => None,
            };
            let study = StudyProblem {
                coefficient: pc.coefficient.clone(),
                region: pc.omega.clone(),
                grading: pc.grading,
                horizon: pc.horizon,
                lower: pc.lower,
                upper: pc.upper,
                control: &control,
                initial: &initial,
                exact: exact_fn.as_ref().map(|f| f as &dyn Fn(f64, f64) -> f64),
                base_cells: pc.n_cells,
                base_steps: pc.n_steps,
                quad_order: pc.quad_order,
            };
            let r = convergence_study(&study, v.convergence_levels, opts)?;
            out.push(entry("convergence", r.passed, &r)?);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown suite `{other}` (expected all or one of {})",
                SUITES.join(", ")
            )))
        }
    }
    Ok(out)
}

pub fn verify(cfg: &RunConfig, out: &OutputDir, suite: &str) -> Result<Outcome, CliError> {
    let selected: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    if let Some(bad) = selected.iter().find(|s| !SUITES.contains(s)) {
        return Err(CliError::Config(format!("unknown suite `{bad}` (expected all or one of {})", SUITES.join(", "))));
    }
    let p = Problem::build(cfg, true)?;
    let mut checks = Vec::new();
    for s in selected {
        checks.extend(run_suite(cfg, &p, s)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    out.json("verify.json", "verify", &VerifyReport { suite: suite.into(), passed, checks })?;
    Ok(if passed { Outcome::Ok } else { Outcome::VerificationFailed })
}

#[derive(Serialize)]
struct SweepRow {
    value: String,
    status: &'static str,
    converged: Option<bool>,
    iterations: Option<usize>,
    cost: Option<f64>,
    residual: Option<f64>,
    ssc_threshold: Option<f64>,
    /// α - threshold
    delta: Option<f64>,
    gamma_hat: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport {
    parameter: String,
    rows: Vec<SweepRow>,
    succeeded: usize,
}

fn sweep_row(cfg: &RunConfig, key: &str, value: &str) -> (SweepRow, Option<CliError>) {
    let mut row = SweepRow {
        value: value.into(),
        status: "ok",
        converged: None,
        iterations: None,
        cost: None,
        residual: None,
        ssc_threshold: None,
        delta: None,
        gamma_hat: None,
        error: None,
    };
    let result = with_parameter(cfg, key, value).and_then(|c| run_optimization(&c));
    match result {
        Ok((_, res, report)) => {
            row.converged = Some(res.converged);
            row.iterations = Some(res.iterations);
            row.cost = Some(res.final_cost());
            row.residual = Some(res.final_residual());
            row.ssc_threshold = Some(res.ssc.threshold);
            row.delta = Some(res.ssc.margin);
            row.gamma_hat =
                report.certification.as_ref().and_then(|c| c.pointer("/growth/gamma_hat")).and_then(Value::as_f64);
            if !res.converged {
                row.status = "not_converged";
            }
            (row, None)
        }
        Err(e) => {
            row.status = "failed";
            row.error = Some(e.to_string());
            (row, Some(e))
        }
    }
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

fn opt_e(v: &Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

/// Rows run concurrently; results are collected in input order.
pub fn sweep(cfg: &RunConfig, out: &OutputDir, assignment: &str) -> Result<Outcome, CliError> {
    let Some((key, list)) = assignment.split_once('=') else {
        return Err(CliError::Config(format!("--sweep expects key=v1,v2,..., got `{assignment}`")));
    };
    let values: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("--sweep {key}: empty value list")));
    }
    let key = key.trim();
    let results: Vec<(SweepRow, Option<CliError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = values.iter().map(|v| s.spawn(move || sweep_row(cfg, key, v))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep row panicked")).collect()
    });

    let succeeded = results.iter().filter(|(r, _)| r.status == "ok").count();
    {
        use std::io::Write;
        let mut w = out.csv("sweep.csv")?;
        writeln!(w, "{key},status,converged,iterations,cost,residual,ssc_threshold,delta,gamma_hat")?;
        for (r, _) in &results {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.value,
                r.status,
                opt(&r.converged),
                opt(&r.iterations),
                opt_e(&r.cost),
                opt_e(&r.residual),
                opt_e(&r.ssc_threshold),
                opt_e(&r.delta),
                opt_e(&r.gamma_hat)
            )?;
        }
        w.flush()?;
    }
    let mut first_error = None;
    let mut rows = Vec::with_capacity(results.len());
    for (r, e) in results {
        if first_error.is_none() {
            first_error = e;
        }
        rows.push(r);
    }
    out.json("sweep.json", "sweep", &SweepReport { parameter: key.into(), rows, succeeded })?;
    match (succeeded, first_error) {
        (0, Some(e)) => Err(e),
        (0, None) => Ok(Outcome::NotConverged),
        _ => Ok(Outcome::Ok),
    }
}
