//! Projected gradient descent with Armijo backtracking along the projection
//! arc and Barzilai–Borwein step estimates, plus a certification pass that
//! audits first- and second-order optimality at the returned control.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{inner_omega_t, norm_l2_omega_t, ControlField, ProblemSpec, Trajectory};
use crate::geometry::AssembledOperators;
use crate::reduced::{
    active_set, cost_increment, critical_cone_test, evaluate, hessian_form, project_box, reduced_gradient,
    restrict_to_cone, ssc_threshold, stationarity_residual, trichotomy_audit, ActiveSetReport, Evaluation,
    GradientField, SscReport, TrichotomyAudit,
};
use crate::solvers::SchemeOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continuation {
    /// α of the first stage; stages shrink toward the target α.
    pub alpha_start: f64,
    /// Multiplier applied to α between stages, in (0, 1).
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    pub stationarity_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub seed: u64,
    /// Strong-activity threshold used for the final active-set snapshot.
    pub tau: f64,
    pub continuation: Option<Continuation>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            stationarity_tol: 1e-10,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1e4,
            min_step: 1e-12,
            seed: 0,
            tau: 1e-6,
            continuation: None,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.stationarity_tol > 0.0) || !(self.min_step > 0.0) || !(self.initial_step >= self.min_step) {
            return invalid("optimizer tolerances must be positive and initial_step >= min_step");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return invalid(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return invalid(format!("backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor));
        }
        if !(self.tau >= 0.0) {
            return invalid("tau must be nonnegative");
        }
        if let Some(c) = self.continuation {
            if !(c.factor > 0.0 && c.factor < 1.0) || !(c.alpha_start > 0.0) {
                return invalid("continuation needs alpha_start > 0 and factor in (0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Direct cost evaluation, capped by the previous record: once successive
    /// costs agree to rounding, the accepted step is known to decrease the cost
    /// (see `increment`) while the direct values can wobble by an ulp.
    pub cost: f64,
    /// `J(u_k) - J(u_{k-1})` from the state-difference recursion (0 for the initial record).
    pub increment: f64,
    pub residual: f64,
    /// Accepted step length (0 for the initial record).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub control: ControlField,
    pub state: Trajectory,
    pub adjoint: Trajectory,
    pub gradient: GradientField,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Line search fell below `min_step`.
    pub stalled: bool,
    pub continuation_stages: usize,
    pub active_set: ActiveSetReport,
    pub ssc: SscReport,
    pub wall_time: Duration,
}

impl OptimizationResult {
    pub fn final_cost(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.cost)
    }

    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.residual)
    }

    pub fn cost_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.cost).collect()
    }
}

struct Iterate {
    u: ControlField,
    ev: Evaluation,
    grad: GradientField,
    residual: f64,
}

fn iterate_at(spec: &ProblemSpec, ops: &AssembledOperators, u: ControlField, opts: &SchemeOptions) -> Result<Iterate> {
    let ev = evaluate(spec, ops, &u, opts)?;
    let grad = reduced_gradient(spec, ops, &u, &ev.state, &ev.adjoint, opts)?;
    let residual = stationarity_residual(spec, ops, &u, &ev.state, &ev.adjoint, opts)?;
    Ok(Iterate { u, ev, grad, residual })
}

struct Stage {
    it: Iterate,
    history: Vec<IterationRecord>,
    iterations: usize,
    converged: bool,
    stalled: bool,
}

fn run_stage(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u0: ControlField,
    options: &OptimizerOptions,
    opts: &SchemeOptions,
) -> Result<Stage> {
    let time = &spec.time;
    let mut it = iterate_at(spec, ops, u0, opts)?;
    let mut history = vec![IterationRecord { iter: 0, cost: it.ev.cost, increment: 0.0, residual: it.residual, step: 0.0 }];
    let mut step = options.initial_step;
    let mut converged = it.residual <= options.stationarity_tol;
    let mut stalled = false;
    let mut iterations = 0;

    while !converged && iterations < options.max_iters {
        let mut s = step;
        let accepted = loop {
            let trial = project_box(&it.u.add_scaled(-s, &it.grad.values), spec.lower, spec.upper)?;
            let du = trial.add_scaled(-1.0, &it.u);
            let du2 = inner_omega_t(&du, &du, ops, time)?;
            let dj = cost_increment(spec, ops, &it.u, &it.ev.state, &trial, opts)?;
            if dj <= -options.armijo_c / s * du2 {
                break Some((trial, s, dj));
            }
            s *= options.backtrack_factor;
            if s < options.min_step {
                break None;
            }
        };
        let Some((u_new, s_acc, dj)) = accepted else {
            stalled = true;
            break;
        };
        let next = iterate_at(spec, ops, u_new, opts)?;
        iterations += 1;

        // Barzilai–Borwein: ⟨Δu, Δu⟩ / ⟨Δu, Δg⟩
        let du = next.u.add_scaled(-1.0, &it.u);
        let dg = next.grad.values.add_scaled(-1.0, &it.grad.values);
        let sy = inner_omega_t(&du, &dg, ops, time)?;
        let ss = inner_omega_t(&du, &du, ops, time)?;
        step = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(options.min_step, options.initial_step) } else { options.initial_step };

        let cost = history.last().map_or(next.ev.cost, |r| r.cost.min(next.ev.cost));
        history.push(IterationRecord { iter: iterations, cost, increment: dj, residual: next.residual, step: s_acc });
        it = next;
        converged = it.residual <= options.stationarity_tol;
    }
    Ok(Stage { it, history, iterations, converged, stalled })
}

/// Minimizes the discrete reduced cost over the box, starting from `u0`.
pub fn optimize(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u0: &ControlField,
    options: &OptimizerOptions,
    opts: &SchemeOptions,
) -> Result<OptimizationResult> {
    options.validate()?;
    if !u0.iter().all(|&v| spec.lower <= v && v <= spec.upper) {
        return invalid("initial control must lie inside the box");
    }
    let start = Instant::now();
    let mut u = u0.clone();
    let mut stages = 0;
    if let Some(cont) = options.continuation {
        let mut alpha = cont.alpha_start;
        while alpha > spec.alpha {
            let mut stage_spec = spec.clone();
            stage_spec.alpha = alpha;
            u = run_stage(&stage_spec, ops, u, options, opts)?.it.u;
            stages += 1;
            alpha *= cont.factor;
        }
    }
    let stage = run_stage(spec, ops, u, options, opts)?;
    stages += 1;
    let active = active_set(&stage.it.grad, options.tau)?;
    Ok(OptimizationResult {
        control: stage.it.u,
        state: stage.it.ev.state,
        adjoint: stage.it.ev.adjoint,
        gradient: stage.it.grad,
        history: stage.history,
        iterations: stage.iterations,
        converged: stage.converged,
        stalled: stage.stalled,
        continuation_stages: stages,
        active_set: active,
        ssc: ssc_threshold(spec),
        wall_time: start.elapsed(),
    })
}

/// Uniform random control inside the box, deterministic in `seed`.
pub fn random_control(spec: &ProblemSpec, ops: &AssembledOperators, seed: u64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = spec.zero_control(ops);
    for v in u.values.iter_mut().flatten() {
        *v = rng.gen_range(spec.lower..=spec.upper);
    }
    u
}

/// Random direction mixing a smooth space–time mode with pointwise noise.
pub fn random_direction(template: &ControlField, rng: &mut impl Rng) -> ControlField {
    let (kx, kt) = (rng.gen_range(0.5..4.0), rng.gen_range(0.5..4.0));
    let (px, pt) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let ns = template.n_slabs().max(1) as f64;
    let nc = template.n_control().max(1) as f64;
    let mut out = template.like(0.0);
    for (s, row) in out.values.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            let smooth = (kx * k as f64 / nc * 6.3 + px).sin() * (kt * s as f64 / ns * 6.3 + pt).cos();
            *v = smooth + 0.5 * rng.gen_range(-1.0..1.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    pub hessian_samples: usize,
    pub growth_samples: usize,
    /// Radius ε of the L²(ω_T) ball probed for quadratic growth.
    pub growth_radius: f64,
    /// τ of the critical cone used for the coercivity samples.
    pub tau: f64,
    pub trichotomy_tol: f64,
    /// Slack allowed in the coercivity inequality.
    pub coercivity_tol: f64,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            hessian_samples: 50,
            growth_samples: 200,
            growth_radius: 1e-2,
            tau: 1e-6,
            trichotomy_tol: 1e-8,
            coercivity_tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivitySamples {
    pub samples: usize,
    /// Minimum of 𝒥''(u)v² / ‖v‖² over the sampled cone directions.
    pub min_rayleigh: f64,
    /// SSC margin δ = α - threshold the quotients are compared with.
    pub margin: f64,
    pub all_above_margin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthProbe {
    pub samples: usize,
    pub radius: f64,
    /// Minimum of J(v) - J(u*) over the samples.
    pub min_increase: f64,
    /// Largest γ with J(v) ≥ J(u*) + (γ/2)‖v - u*‖² on the samples.
    pub gamma_hat: f64,
    pub all_nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub stationarity_residual: f64,
    pub trichotomy: TrichotomyAudit,
    pub ssc: SscReport,
    pub active_set: ActiveSetReport,
    pub coercivity: CoercivitySamples,
    pub growth: GrowthProbe,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.trichotomy.passed()
            && self.growth.all_nonnegative
            && self.growth.gamma_hat > 0.0
            && (!self.ssc.satisfied || self.coercivity.all_above_margin)
    }
}

/// Audits a converged optimizer result.
pub fn certify(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    result: &OptimizationResult,
    options: &CertifyOptions,
    opts: &SchemeOptions,
) -> Result<Certification> {
    if !result.converged {
        return invalid("certification needs a converged optimization result");
    }
    let u = &result.control;
    let (y, q) = (&result.state, &result.adjoint);
    let time = &spec.time;
    let residual = stationarity_residual(spec, ops, u, y, q, opts)?;
    let grad = reduced_gradient(spec, ops, u, y, q, opts)?;
    let trichotomy = trichotomy_audit(u, &grad, options.trichotomy_tol);
    let ssc = ssc_threshold(spec);
    let report = active_set(&grad, options.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut min_rayleigh = f64::INFINITY;
    let mut all_above = true;
    let mut taken = 0;
    for _ in 0..options.hessian_samples {
        let v = restrict_to_cone(&random_direction(u, &mut rng), u, &report);
        debug_assert!(critical_cone_test(&v, u, &report));
        let nv2 = inner_omega_t(&v, &v, ops, time)?;
        if nv2 == 0.0 {
            continue;
        }
        taken += 1;
        let hv = hessian_form(spec, ops, u, y, q, &v, &v, opts)?;
        min_rayleigh = min_rayleigh.min(hv / nv2);
        if hv < ssc.margin * nv2 - options.coercivity_tol {
            all_above = false;
        }
    }

    let mut min_increase = f64::INFINITY;
    let mut gamma_hat = f64::INFINITY;
    let mut growth_taken = 0;
    for _ in 0..options.growth_samples {
        let d = random_direction(u, &mut rng);
        let nd = norm_l2_omega_t(&d, ops, time)?;
        if nd == 0.0 {
            continue;
        }
        let r = options.growth_radius * rng.gen_range(0.05..=1.0);
        let v = project_box(&u.add_scaled(r / nd, &d), spec.lower, spec.upper)?;
        let dist2 = {
            let diff = v.add_scaled(-1.0, u);
            inner_omega_t(&diff, &diff, ops, time)?
        };
        if dist2 == 0.0 {
            continue;
        }
        growth_taken += 1;
        let inc = cost_increment(spec, ops, u, y, &v, opts)?;
        min_increase = min_increase.min(inc);
        gamma_hat = gamma_hat.min(2.0 * inc / dist2);
    }

    Ok(Certification {
        stationarity_residual: residual,
        trichotomy,
        ssc: ssc.clone(),
        active_set: report,
        coercivity: CoercivitySamples {
            samples: taken,
            min_rayleigh,
            margin: ssc.margin,
            all_above_margin: all_above,
        },
        growth: GrowthProbe {
            samples: growth_taken,
            radius: options.growth_radius,
            min_increase,
            gamma_hat,
            all_nonnegative: min_increase >= 0.0,
        },
    })
}
