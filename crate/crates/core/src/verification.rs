//! Executable checks of the analytical claims: discrete maximum principles,
//! derivative oracles, Lipschitz probes and refinement studies. Every report
//! carries a `passed` flag and the worst witness it found.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fields::{
    inner_omega_t, norm_c_l2, norm_l2_h1a, norm_l2_omega_t, sup, ControlField, ProblemSpec, TimeGrid, Trajectory,
};
use crate::geometry::{assemble, build_mesh, AssembledOperators, ControlRegion, DiffusionCoefficient, Grading};
use crate::optimizer::random_control;
use crate::reduced::{
    algebraic_gradient, cost_increment, evaluate, hessian_form, reduced_cost, reduced_gradient, riesz_representative,
};
use crate::solvers::{solve_state, SchemeOptions};

/// Smallest tolerated nodal value of a nonnegative run.
pub const POSITIVITY_TOL: f64 = 1e-12;
/// Largest acceptable best-case relative error of the central difference quotient.
pub const GRADIENT_FD_TOL: f64 = 1e-6;
/// Accepted band for the fitted log-log slope of the central difference error.
pub const GRADIENT_SLOPE_BAND: (f64, f64) = (1.8, 2.2);
/// Relative ω_T distance allowed between the pointwise and the transposed-scheme gradient.
pub const DUAL_PATH_TOL: f64 = 1e-10;
/// Relative agreement required between the Hessian form and the second difference.
pub const HESSIAN_FD_TOL: f64 = 1e-4;
/// Relative deficit `(α - ratio)/α` tolerated on the most oscillatory direction.
pub const OSCILLATION_TOL: f64 = 1e-2;
/// Minimal observed order in a refinement study.
pub const MIN_ORDER: f64 = 0.9;

/// Location of the worst sample of the maximum-principle suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleWitness {
    pub run: usize,
    pub kind: &'static str,
    pub step: usize,
    pub node: usize,
    pub value: f64,
    pub bound: f64,
    /// The control of the offending run, slab by slab.
    pub control: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleReport {
    pub runs: usize,
    pub seed: u64,
    /// Smallest nodal value of the sign-normalized runs.
    pub worst_min: f64,
    /// Smallest `bound - sup|y|` over all runs.
    pub worst_sup_margin: f64,
    pub positivity_violations: usize,
    pub sup_violations: usize,
    pub witness: Option<MaxPrincipleWitness>,
    pub passed: bool,
}

/// Random admissible controls against positivity and the sup bound
/// `‖y‖_∞ ≤ e^{(‖v‖_∞+1)T}‖y⁰‖_∞`.
///
/// Run 0 uses `y⁰` as given, later runs damp it pointwise by uniform factors
/// in [0, 1], which keeps its sign and creates steep local profiles. A
/// nonpositive `y⁰` is checked through `-y`; a sign-changing one is rejected.
pub fn check_max_principles(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    n_random_controls: usize,
    seed: u64,
    opts: &SchemeOptions,
) -> Result<MaxPrincipleReport> {
    let sign = if spec.y0.iter().all(|&v| v >= 0.0) {
        1.0
    } else if spec.y0.iter().all(|&v| v <= 0.0) {
        -1.0
    } else {
        return invalid("maximum principles need a one-signed initial datum");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MaxPrincipleReport {
        runs: n_random_controls,
        seed,
        worst_min: f64::INFINITY,
        worst_sup_margin: f64::INFINITY,
        positivity_violations: 0,
        sup_violations: 0,
        witness: None,
        passed: true,
    };
    let mut run_spec = spec.clone();
    for run in 0..n_random_controls {
        let v = random_control(spec, ops, rng.gen());
        run_spec.y0 = if run == 0 {
            spec.y0.clone()
        } else {
            spec.y0.iter().map(|&y| y * rng.gen_range(0.0..=1.0)).collect()
        };
        let y = solve_state(&run_spec, ops, &v, opts)?;
        let bound = ((v.max_abs() + 1.0) * spec.time.horizon).exp() * sup(&run_spec.y0);

        let mut low = (f64::INFINITY, 0, 0);
        let mut high = (0.0_f64, 0, 0);
        for (n, level) in y.values.iter().enumerate() {
            for (i, &val) in level.iter().enumerate() {
                if sign * val < low.0 {
                    low = (sign * val, n, i);
                }
                if val.abs() > high.0 {
                    high = (val.abs(), n, i);
                }
            }
        }
        report.worst_min = report.worst_min.min(low.0);
        report.worst_sup_margin = report.worst_sup_margin.min(bound - high.0);

        let mut record = |kind, (value, step, node): (f64, usize, usize), bound| {
            if report.witness.is_none() {
                report.witness = Some(MaxPrincipleWitness { run, kind, step, node, value, bound, control: v.values.clone() });
            }
        };
        if low.0 < -POSITIVITY_TOL {
            report.positivity_violations += 1;
            record("positivity", low, -POSITIVITY_TOL);
        }
        if !(high.0 <= bound) {
            report.sup_violations += 1;
            record("sup_bound", high, bound);
        }
    }
    report.passed = report.positivity_violations == 0 && report.sup_violations == 0;
    Ok(report)
}

/// Least-squares slope of `log e` against `log ε`.
fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Ratio between the smallest error of a curve and the errors still counted
/// as truncation-dominated.
const PLATEAU_MARGIN: f64 = 100.0;

/// Fit on the descending part of an error curve: points with ε at least the
/// one that minimizes the error, and whose error exceeds that minimum by
/// [`PLATEAU_MARGIN`], so rounding noise near the floor does not bend the fit.
fn pre_plateau(eps: &[f64], errors: &[f64]) -> (usize, Option<f64>) {
    let best = (0..errors.len()).min_by(|&a, &b| errors[a].total_cmp(&errors[b])).unwrap_or(0);
    let floor = PLATEAU_MARGIN * errors[best];
    let seg: Vec<(f64, f64)> = eps
        .iter()
        .zip(errors)
        .take(best + 1)
        .filter(|(_, r)| **r >= floor)
        .map(|(e, r)| (*e, *r))
        .collect();
    (best, loglog_slope(&seg))
}

fn sorted_grid(eps_grid: &[f64]) -> Result<Vec<f64>> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return invalid("step grid must be a nonempty list of positive numbers");
    }
    let mut eps = eps_grid.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    Ok(eps)
}

fn check_feasible(spec: &ProblemSpec, u: &ControlField, w: &ControlField, eps: f64) -> Result<()> {
    for (&a, &d) in u.iter().zip(w.iter()) {
        for v in [a + eps * d, a - eps * d] {
            if !(spec.lower <= v && v <= spec.upper) {
                return invalid(format!("perturbation u ± {eps}·w leaves the box at value {v}"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// ⟨αu + yq, w⟩_{L²(ω_T)}
    pub directional: f64,
    /// Step sizes, largest first.
    pub eps: Vec<f64>,
    pub difference_quotients: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub min_relative_error: f64,
    /// Log-log slope on the descending segment; `None` when the curve is flat zero.
    pub slope: Option<f64>,
    pub plateau_eps: f64,
    /// ‖pointwise - transposed-scheme gradient‖ / ‖pointwise‖ in L²(ω_T).
    pub dual_path_error: f64,
    pub passed: bool,
}

/// Central differences of the reduced cost along `w` against the adjoint
/// directional derivative, plus the comparison of the pointwise gradient with
/// the gradient obtained from explicitly transposed step matrices.
pub fn gradient_check(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    w: &ControlField,
    eps_grid: &[f64],
    opts: &SchemeOptions,
) -> Result<GradientCheck> {
    let eps = sorted_grid(eps_grid)?;
    if !u.same_shape(w) {
        return invalid("control and direction shapes differ");
    }
    check_feasible(spec, u, w, eps[0])?;
    let ev = evaluate(spec, ops, u, opts)?;
    let grad = reduced_gradient(spec, ops, u, &ev.state, &ev.adjoint, opts)?;
    let directional = inner_omega_t(&grad.values, w, ops, &spec.time)?;

    let mut quotients = Vec::with_capacity(eps.len());
    let mut errors = Vec::with_capacity(eps.len());
    for &e in &eps {
        let plus = reduced_cost(spec, ops, &u.add_scaled(e, w), opts)?;
        let minus = reduced_cost(spec, ops, &u.add_scaled(-e, w), opts)?;
        let fd = (plus - minus) / (2.0 * e);
        let diff = (fd - directional).abs();
        quotients.push(fd);
        errors.push(if diff == 0.0 { 0.0 } else { diff / directional.abs() });
    }
    let (best, slope) = pre_plateau(&eps, &errors);
    let min_relative_error = errors[best];

    let raw = algebraic_gradient(spec, ops, u, opts)?;
    let transposed = riesz_representative(&raw, ops, spec.time.dt());
    let gap = norm_l2_omega_t(&grad.values.add_scaled(-1.0, &transposed), ops, &spec.time)?;
    let scale = norm_l2_omega_t(&grad.values, ops, &spec.time)?;
    let dual_path_error = if gap == 0.0 { 0.0 } else { gap / scale };

    let slope_ok = slope.is_none_or(|s| GRADIENT_SLOPE_BAND.0 <= s && s <= GRADIENT_SLOPE_BAND.1);
    let passed = min_relative_error < GRADIENT_FD_TOL && slope_ok && dual_path_error < DUAL_PATH_TOL;
    Ok(GradientCheck {
        directional,
        eps: eps.clone(),
        difference_quotients: quotients,
        relative_errors: errors,
        min_relative_error,
        slope,
        plateau_eps: eps[best],
        dual_path_error,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondDifference {
    pub direction: usize,
    pub form: f64,
    pub relative_errors: Vec<f64>,
    pub min_relative_error: f64,
    pub best_eps: f64,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationSample {
    pub frequency: usize,
    /// 𝒥''(u)[v, v] / ‖v‖²
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianCheck {
    pub pairs: usize,
    /// Largest |𝒥''(u)[w,h] - 𝒥''(u)[h,w]|, required to vanish exactly.
    pub max_asymmetry: f64,
    pub eps: Vec<f64>,
    pub second_differences: Vec<SecondDifference>,
    /// Directions for which the form with a zero adjoint fell below α‖w‖².
    pub zero_adjoint_violations: usize,
    pub alpha: f64,
    pub oscillation: Vec<OscillationSample>,
    pub oscillation_deficit: f64,
    pub passed: bool,
}

/// Sign pattern oscillating at `k` half-waves in space and time; at `k` equal
/// to the grid size it is the space–time checkerboard.
fn oscillating_direction(template: &ControlField, k: usize) -> ControlField {
    let mut out = template.like(0.0);
    let nc = template.n_control().max(1);
    let ns = template.n_slabs().max(1);
    for (s, row) in out.values.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let bx = (i * k / nc) % 2;
            let bt = (s * k / ns) % 2;
            *v = if bx == bt { 1.0 } else { -1.0 };
        }
    }
    out
}

/// Symmetry over all pairs of `directions`, second differences of the cost
/// along each direction, the zero-adjoint lower bound and the oscillating
/// sequence whose Rayleigh quotients must approach at least α.
pub fn hessian_check(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    directions: &[ControlField],
    eps_grid: &[f64],
    opts: &SchemeOptions,
) -> Result<HessianCheck> {
    let eps = sorted_grid(eps_grid)?;
    if directions.iter().any(|d| !u.same_shape(d)) {
        return invalid("direction shapes differ from the control");
    }
    for d in directions {
        check_feasible(spec, u, d, eps[0])?;
    }
    let ev = evaluate(spec, ops, u, opts)?;
    let (y, q) = (&ev.state, &ev.adjoint);
    let time = &spec.time;

    let mut pairs = 0;
    let mut max_asymmetry = 0.0_f64;
    for (a, w) in directions.iter().enumerate() {
        for h in &directions[a + 1..] {
            let wh = hessian_form(spec, ops, u, y, q, w, h, opts)?;
            let hw = hessian_form(spec, ops, u, y, q, h, w, opts)?;
            max_asymmetry = max_asymmetry.max((wh - hw).abs());
            pairs += 1;
        }
    }

    let mut second_differences = Vec::with_capacity(directions.len());
    let mut fd_ok = true;
    let zero_q = Trajectory { values: vec![vec![0.0; ops.n_nodes()]; q.n_levels()], role: q.role };
    let mut zero_adjoint_violations = 0;
    for (idx, d) in directions.iter().enumerate() {
        let form = hessian_form(spec, ops, u, y, q, d, d, opts)?;
        let mut errors = Vec::with_capacity(eps.len());
        for &e in &eps {
            let plus = cost_increment(spec, ops, u, y, &u.add_scaled(e, d), opts)?;
            let minus = cost_increment(spec, ops, u, y, &u.add_scaled(-e, d), opts)?;
            let sd = (plus + minus) / (e * e);
            let diff = (sd - form).abs();
            errors.push(if diff == 0.0 { 0.0 } else { diff / form.abs() });
        }
        let (best, slope) = pre_plateau(&eps, &errors);
        fd_ok &= errors[best] < HESSIAN_FD_TOL;
        second_differences.push(SecondDifference {
            direction: idx,
            form,
            relative_errors: errors.clone(),
            min_relative_error: errors[best],
            best_eps: eps[best],
            slope,
        });
        let reg = spec.alpha * inner_omega_t(d, d, ops, time)?;
        if hessian_form(spec, ops, u, y, &zero_q, d, d, opts)? < reg {
            zero_adjoint_violations += 1;
        }
    }

    let finest = u.n_slabs().max(u.n_control());
    let mut freqs: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k < finest).collect();
    freqs.push(finest);
    let mut oscillation = Vec::with_capacity(freqs.len());
    for k in freqs {
        let v = oscillating_direction(u, k);
        let nv = inner_omega_t(&v, &v, ops, time)?;
        if nv == 0.0 {
            continue;
        }
        let ratio = hessian_form(spec, ops, u, y, q, &v, &v, opts)? / nv;
        oscillation.push(OscillationSample { frequency: k, ratio });
    }
    let oscillation_deficit = oscillation.last().map_or(0.0, |o| ((spec.alpha - o.ratio) / spec.alpha).max(0.0));

    let passed =
        max_asymmetry == 0.0 && fd_ok && zero_adjoint_violations == 0 && oscillation_deficit <= OSCILLATION_TOL;
    Ok(HessianCheck {
        pairs,
        max_asymmetry,
        eps,
        second_differences,
        zero_adjoint_violations,
        alpha: spec.alpha,
        oscillation,
        oscillation_deficit,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub skipped: usize,
    /// (‖δy‖_{C(L²)} + ‖δy‖_{L²(H¹_a)}) / ‖δv‖_{L²(ω_T)}, largest over the pairs.
    pub max_state_ratio: f64,
    pub max_state_ratio_c_l2: f64,
    pub max_state_ratio_l2_h1a: f64,
    /// 2e^{2(β+1)T}‖y⁰‖_∞
    pub state_bound: f64,
    pub max_adjoint_ratio: f64,
    /// 2e^{(β+1)T}(2e^{2(β+1)T}‖y⁰‖_∞ + e^{(β+1)T}(‖y⁰‖_∞ + ‖y^d‖_∞)), reported only.
    pub adjoint_reference: f64,
    pub worst_pair: Option<usize>,
    pub passed: bool,
}

fn ratio_parts(a: &Trajectory, b: &Trajectory, ops: &AssembledOperators, time: &TimeGrid) -> Result<(f64, f64)> {
    let d = a.difference(b);
    Ok((norm_c_l2(&d, ops)?, norm_l2_h1a(&d, ops, time)?))
}

/// Ratios of state and adjoint differences to control differences for random
/// pairs; identical pairs are skipped.
pub fn lipschitz_probe(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    n_pairs: usize,
    seed: u64,
    opts: &SchemeOptions,
) -> Result<LipschitzReport> {
    let pairs: Vec<(ControlField, ControlField)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_pairs).map(|_| (random_control(spec, ops, rng.gen()), random_control(spec, ops, rng.gen()))).collect()
    };
    lipschitz_over_pairs(spec, ops, &pairs, opts)
}

/// [`lipschitz_probe`] on explicitly given pairs.
pub fn lipschitz_over_pairs(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    pairs: &[(ControlField, ControlField)],
    opts: &SchemeOptions,
) -> Result<LipschitzReport> {
    let k = (spec.beta + 1.0) * spec.time.horizon;
    let (y0, yd) = (spec.y0_sup(), spec.yd_sup());
    let mut report = LipschitzReport {
        pairs: pairs.len(),
        skipped: 0,
        max_state_ratio: 0.0,
        max_state_ratio_c_l2: 0.0,
        max_state_ratio_l2_h1a: 0.0,
        state_bound: 2.0 * (2.0 * k).exp() * y0,
        max_adjoint_ratio: 0.0,
        adjoint_reference: 2.0 * k.exp() * (2.0 * (2.0 * k).exp() * y0 + k.exp() * (y0 + yd)),
        worst_pair: None,
        passed: true,
    };
    let mut finite = true;
    for (idx, (v1, v2)) in pairs.iter().enumerate() {
        let dv = norm_l2_omega_t(&v1.add_scaled(-1.0, v2), ops, &spec.time)?;
        if dv == 0.0 {
            report.skipped += 1;
            continue;
        }
        let e1 = evaluate(spec, ops, v1, opts)?;
        let e2 = evaluate(spec, ops, v2, opts)?;
        let (c, h) = ratio_parts(&e1.state, &e2.state, ops, &spec.time)?;
        let state = (c + h) / dv;
        if state > report.max_state_ratio {
            report.max_state_ratio = state;
            report.worst_pair = Some(idx);
        }
        report.max_state_ratio_c_l2 = report.max_state_ratio_c_l2.max(c / dv);
        report.max_state_ratio_l2_h1a = report.max_state_ratio_l2_h1a.max(h / dv);
        let (qc, qh) = ratio_parts(&e1.adjoint, &e2.adjoint, ops, &spec.time)?;
        let adjoint = (qc + qh) / dv;
        finite &= state.is_finite() && adjoint.is_finite();
        report.max_adjoint_ratio = report.max_adjoint_ratio.max(adjoint);
    }
    report.passed = finite && report.max_state_ratio <= report.state_bound;
    Ok(report)
}

/// Mesh-independent description of a refinement study: control `v(t, x)`,
/// initial datum and optional closed-form solution given as functions.
pub struct StudyProblem<'a> {
    pub coefficient: DiffusionCoefficient,
    pub region: ControlRegion,
    pub grading: Grading,
    pub horizon: f64,
    pub lower: f64,
    pub upper: f64,
    pub control: &'a dyn Fn(f64, f64) -> f64,
    pub initial: &'a dyn Fn(f64) -> f64,
    /// `exact(t, x)`; when absent the finest level serves as reference.
    pub exact: Option<&'a dyn Fn(f64, f64) -> f64>,
    pub base_cells: usize,
    pub base_steps: usize,
    pub quad_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyLevel {
    pub n_cells: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// C([0,T]; L²) error against the reference on this level's mesh.
    pub error: f64,
    /// Same norm of the difference to the next finer level.
    pub increment: Option<f64>,
    /// log₂ of the ratio of consecutive increments (or errors, with a closed form).
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub reference: &'static str,
    pub levels: Vec<StudyLevel>,
    pub monotone: bool,
    pub min_order: Option<f64>,
    pub passed: bool,
}

/// Nested refinement halving h and Δt per level. Without a closed form the
/// errors are measured against the finest level by injection, and orders come
/// from differences of consecutive levels.
pub fn convergence_study(
    problem: &StudyProblem<'_>,
    refinement_levels: usize,
    opts: &SchemeOptions,
) -> Result<ConvergenceStudy> {
    if refinement_levels < 3 {
        return invalid(format!("a refinement study needs at least 3 levels, got {refinement_levels}"));
    }
    let mut runs = Vec::with_capacity(refinement_levels);
    for l in 0..refinement_levels {
        let n_cells = problem.base_cells << l;
        let n_steps = problem.base_steps << l;
        let mesh = build_mesh(n_cells, problem.grading)?;
        let ops = assemble(&mesh, &problem.coefficient, &problem.region, problem.quad_order)?;
        let y0: Vec<f64> = mesh.nodes().iter().map(|&x| (problem.initial)(x)).collect();
        let spec = ProblemSpec::new(
            problem.coefficient.clone(),
            problem.region.clone(),
            TimeGrid::new(problem.horizon, n_steps)?,
            problem.lower,
            problem.upper,
            1.0,
            y0.clone(),
            y0,
        )?;
        let v = ControlField::from_fn(&ops, &spec.time, problem.lower, problem.upper, problem.control);
        let y = solve_state(&spec, &ops, &v, opts)?;
        runs.push((ops, spec.time, y));
    }

    // Restriction of level `fine` to the mesh and time levels of level `coarse`.
    let inject = |fine: usize, coarse: usize| -> Trajectory {
        let r = 1usize << (fine - coarse);
        let y = &runs[fine].2;
        let values = (0..=runs[coarse].1.n_steps)
            .map(|n| (0..runs[coarse].0.n_nodes()).map(|i| y.values[n * r][i * r]).collect())
            .collect();
        Trajectory { values, role: y.role }
    };

    let last = refinement_levels - 1;
    let mut levels = Vec::with_capacity(refinement_levels);
    for (l, (ops, time, y)) in runs.iter().enumerate() {
        let error = match problem.exact {
            Some(f) => {
                let x = ops.mesh.nodes();
                let exact = Trajectory {
                    values: (0..=time.n_steps).map(|n| x.iter().map(|&xi| f(time.time(n), xi)).collect()).collect(),
                    role: y.role,
                };
                norm_c_l2(&y.difference(&exact), ops)?
            }
            None => norm_c_l2(&y.difference(&inject(last, l)), ops)?,
        };
        let increment =
            if l < last { Some(norm_c_l2(&y.difference(&inject(l + 1, l)), ops)?) } else { None };
        levels.push(StudyLevel { n_cells: ops.mesh.n_cells(), n_steps: time.n_steps, dt: time.dt(), error, increment, order: None });
    }

    let floor = 1e-13;
    let measured: Vec<f64> = match problem.exact {
        Some(_) => levels.iter().map(|l| l.error).collect(),
        None => levels.iter().filter_map(|l| l.increment).collect(),
    };
    for i in 1..measured.len() {
        if measured[i - 1] > floor && measured[i] > floor {
            levels[i].order = Some((measured[i - 1] / measured[i]).log2());
        }
    }
    let compared = if problem.exact.is_some() { &levels[..] } else { &levels[..last] };
    let monotone = compared.windows(2).all(|w| w[1].error < w[0].error || (w[0].error <= floor && w[1].error <= floor));
    let min_order = levels.iter().filter_map(|l| l.order).reduce(f64::min);
    let passed = monotone && min_order.is_none_or(|o| o >= MIN_ORDER);
    Ok(ConvergenceStudy {
        reference: if problem.exact.is_some() { "closed_form" } else { "finest_level" },
        levels,
        monotone,
        min_order,
        passed,
    })
}
