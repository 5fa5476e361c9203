//! Reduced cost, its first and second derivatives, the box projection and the
//! objects of the optimality theory (strongly active sets, critical cones and
//! the second-order sufficiency threshold).

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fields::{inner_omega_t, norm_l2_omega_t, ControlField, ProblemSpec, Trajectory};
use crate::geometry::AssembledOperators;
use crate::linalg::dot;
use crate::solvers::{solve_adjoint, solve_linearized, solve_second_linearized, solve_state, Scheme, SchemeOptions};

/// State, adjoint and cost at one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: Trajectory,
    pub adjoint: Trajectory,
    pub cost: f64,
}

/// `y(T) - y^d`
pub fn terminal_mismatch(spec: &ProblemSpec, y: &Trajectory) -> Vec<f64> {
    y.last().iter().zip(&spec.yd).map(|(a, b)| a - b).collect()
}

/// ½‖y(T) - y^d‖²_{L²} + (α/2)‖v‖²_{L²(ω_T)}
pub fn cost(spec: &ProblemSpec, ops: &AssembledOperators, v: &ControlField, y: &Trajectory) -> Result<f64> {
    if y.n_levels() != spec.time.n_steps + 1 || y.last().len() != ops.n_nodes() {
        return invalid("state trajectory does not match the problem");
    }
    let e = terminal_mismatch(spec, y);
    let reg = inner_omega_t(v, v, ops, &spec.time)?;
    Ok(0.5 * ops.mass.quad_form(&e, &e) + 0.5 * spec.alpha * reg)
}

/// Forward solve and cost only.
pub fn reduced_cost(spec: &ProblemSpec, ops: &AssembledOperators, v: &ControlField, opts: &SchemeOptions) -> Result<f64> {
    let y = solve_state(spec, ops, v, opts)?;
    cost(spec, ops, v, &y)
}

/// `J(v) - J(u)` from the recursion for `δ = y(v) - y(u)`,
///
/// ```text
/// A_s(v) δ^{s+1} = c E_s(v) δ^s + Δt B(v_s - u_s) ŷ_s(u)
/// ```
///
/// so the increment keeps full relative accuracy when `v` is close to `u`.
pub fn cost_increment(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    y_u: &Trajectory,
    v: &ControlField,
    opts: &SchemeOptions,
) -> Result<f64> {
    if !u.same_shape(v) || y_u.n_levels() != spec.time.n_steps + 1 {
        return invalid("cost increment needs matching controls and state");
    }
    if let Some(bad) = v.iter().find(|&&x| !(spec.lower <= x && x <= spec.upper)) {
        return invalid(format!("control value {bad} outside the box [{}, {}]", spec.lower, spec.upper));
    }
    let sch = Scheme::new(ops, spec.time, *opts)?;
    let d = v.add_scaled(-1.0, u);
    let dt = sch.dt();
    let mut delta = vec![0.0; ops.n_nodes()];
    for s in 0..spec.time.n_steps {
        let (a, e) = sch.step_matrices(&v.slab_on_mesh(s, ops));
        let yhat = sch.theta_average(&y_u.values[s], &y_u.values[s + 1]);
        let src = sch.bilinear(&d.slab_on_mesh(s, ops), &yhat);
        let mut rhs = e.matvec(&delta);
        for (r, f) in rhs.iter_mut().zip(&src) {
            *r = sch.growth * *r + dt * f;
        }
        delta = sch.checked_solve(&a, &rhs, s + 1)?;
    }
    let e_u = terminal_mismatch(spec, y_u);
    let md = ops.mass.matvec(&delta);
    let terminal = dot(&md, &e_u) + 0.5 * dot(&md, &delta);
    let reg = spec.alpha * (inner_omega_t(&d, u, ops, &spec.time)? + 0.5 * inner_omega_t(&d, &d, ops, &spec.time)?);
    Ok(terminal + reg)
}

pub fn evaluate(spec: &ProblemSpec, ops: &AssembledOperators, u: &ControlField, opts: &SchemeOptions) -> Result<Evaluation> {
    let state = solve_state(spec, ops, u, opts)?;
    let cost = cost(spec, ops, u, &state)?;
    let adjoint = solve_adjoint(spec, ops, u, &terminal_mismatch(spec, &state), opts)?;
    Ok(Evaluation { state, adjoint, cost })
}

/// The pointwise gradient `αu + y q` on ω_T and its two components.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub values: ControlField,
    /// `αu`
    pub regularization: ControlField,
    /// `ŷ q` with `ŷ` the θ-averaged state of each slab.
    pub coupling: ControlField,
}

/// Pointwise gradient; paired with [`inner_omega_t`] it gives 𝒥'(u)w.
pub fn reduced_gradient(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    y: &Trajectory,
    q: &Trajectory,
    opts: &SchemeOptions,
) -> Result<GradientField> {
    let n = u.n_slabs();
    if n != spec.time.n_steps || y.n_levels() != n + 1 || q.n_levels() != n + 1 {
        return invalid("state/adjoint trajectories do not match the control");
    }
    let sch = Scheme::new(ops, spec.time, *opts)?;
    let values = (0..n)
        .map(|s| {
            let yhat = sch.theta_average(&y.values[s], &y.values[s + 1]);
            ops.control_nodes.iter().map(|&i| yhat[i] * q.values[s][i]).collect()
        })
        .collect();
    let coupling = ControlField { values, lower: u.lower, upper: u.upper };
    let regularization = u.map(|v| spec.alpha * v);
    let values = regularization.add_scaled(1.0, &coupling);
    Ok(GradientField { values, regularization, coupling })
}

/// ∂J_h/∂u as a raw coefficient vector, computed by the Lagrangian of the
/// discrete recursion with explicitly transposed step matrices and the
/// derivatives of A_s and E_s with respect to each control value.
pub fn algebraic_gradient(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    opts: &SchemeOptions,
) -> Result<ControlField> {
    let y = solve_state(spec, ops, u, opts)?;
    let sch = Scheme::new(ops, spec.time, *opts)?;
    let n = spec.time.n_steps;
    let dt = sch.dt();
    let th = opts.theta;
    let c = sch.growth;
    let e = terminal_mismatch(spec, &y);
    let mut out = u.like(0.0);
    let mut rhs = ops.mass.transpose().matvec(&e);
    for s in (0..n).rev() {
        let v = u.slab_on_mesh(s, ops);
        let (a, emat) = sch.step_matrices(&v);
        let lambda = sch.checked_solve(&a.transpose(), &rhs, s)?;
        for (k, &i) in ops.control_nodes.iter().enumerate() {
            let b = ops.region_lumped[i];
            // ∂A_s/∂v_i = -θΔt b_i e_i e_iᵀ, ∂E_s/∂v_i = (1-θ)Δt b_i e_i e_iᵀ
            let d_e = (1.0 - th) * dt * b * y.values[s][i];
            let d_a = -th * dt * b * y.values[s + 1][i];
            out.values[s][k] = lambda[i] * (c * d_e - d_a) + spec.alpha * dt * b * u.values[s][k];
        }
        rhs = emat.transpose().matvec(&lambda);
        rhs.iter_mut().for_each(|x| *x *= c);
    }
    Ok(out)
}

/// Divides a raw derivative by the ω_T quadrature weights Δt·b_i, giving the
/// representative with respect to [`inner_omega_t`].
pub fn riesz_representative(raw: &ControlField, ops: &AssembledOperators, dt: f64) -> ControlField {
    let b = ops.control_weights();
    ControlField {
        values: raw.values.iter().map(|r| r.iter().zip(&b).map(|(g, w)| g / (dt * w)).collect()).collect(),
        lower: raw.lower,
        upper: raw.upper,
    }
}

/// Σ_s Δt Σ_i b_i a_i ŷ_i q_i-type pairing of a control with a slab-averaged trajectory
/// product, used by the Hessian form.
fn coupling_pairing(
    ops: &AssembledOperators,
    sch: &Scheme<'_>,
    w: &ControlField,
    rho: &Trajectory,
    q: &Trajectory,
) -> f64 {
    let dt = sch.dt();
    let mut total = 0.0;
    for s in 0..w.n_slabs() {
        let rhat = sch.theta_average(&rho.values[s], &rho.values[s + 1]);
        for (k, &i) in ops.control_nodes.iter().enumerate() {
            total += dt * ops.region_lumped[i] * w.values[s][k] * rhat[i] * q.values[s][i];
        }
    }
    total
}

/// 𝒥''(u)[w, h] = ∫[h G'(u)w + w G'(u)h] q + ∫ (G'(u)w)(T)(G'(u)h)(T) + α∫ h w,
/// each term with the discrete inner products (two linearized solves).
#[allow(clippy::too_many_arguments)]
pub fn hessian_form(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    y: &Trajectory,
    q: &Trajectory,
    w: &ControlField,
    h: &ControlField,
    opts: &SchemeOptions,
) -> Result<f64> {
    let sch = Scheme::new(ops, spec.time, *opts)?;
    let rho_w = solve_linearized(spec, ops, u, w, y, opts)?;
    let rho_h = solve_linearized(spec, ops, u, h, y, opts)?;
    let first = coupling_pairing(ops, &sch, h, &rho_w, q) + coupling_pairing(ops, &sch, w, &rho_h, q);
    // Symmetrized so that swapping (w, h) is bitwise invariant.
    let terminal = 0.5
        * (ops.mass.quad_form(rho_w.last(), rho_h.last()) + ops.mass.quad_form(rho_h.last(), rho_w.last()));
    let reg = spec.alpha * inner_omega_t(h, w, ops, &spec.time)?;
    Ok(first + terminal + reg)
}

/// Second route: differentiate the terminal cost through the second linearized state,
/// `ρ_w(T)ᵀMρ_h(T) + (y(T)-y^d)ᵀ M z(T) + α⟨w,h⟩`.
#[allow(clippy::too_many_arguments)]
pub fn hessian_via_second_linearized(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    y: &Trajectory,
    w: &ControlField,
    h: &ControlField,
    opts: &SchemeOptions,
) -> Result<f64> {
    let rho_w = solve_linearized(spec, ops, u, w, y, opts)?;
    let rho_h = solve_linearized(spec, ops, u, h, y, opts)?;
    let z = solve_second_linearized(spec, ops, u, w, h, &rho_w, &rho_h, opts)?;
    let e = terminal_mismatch(spec, y);
    Ok(ops.mass.quad_form(rho_w.last(), rho_h.last())
        + dot(&e, &ops.mass.matvec(z.last()))
        + spec.alpha * inner_omega_t(w, h, ops, &spec.time)?)
}

/// Pointwise clamp to [m, M].
pub fn project_box(raw: &ControlField, lower: f64, upper: f64) -> Result<ControlField> {
    if !(lower < upper) {
        return invalid(format!("projection needs m < M, got m = {lower}, M = {upper}"));
    }
    if !raw.is_finite() {
        return invalid("projection input contains non-finite values");
    }
    let mut out = raw.map(|v| v.clamp(lower, upper));
    out.lower = lower;
    out.upper = upper;
    Ok(out)
}

/// `-ŷq/α` projected onto the box: the control the optimality system predicts.
pub fn projected_control(spec: &ProblemSpec, grad: &GradientField) -> Result<ControlField> {
    project_box(&grad.coupling.map(|c| -c / spec.alpha), spec.lower, spec.upper)
}

/// ‖u - P_[m,M](-ŷq/α)‖_{L²(ω_T)}
pub fn stationarity_residual(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    y: &Trajectory,
    q: &Trajectory,
    opts: &SchemeOptions,
) -> Result<f64> {
    if !(spec.alpha > 0.0) {
        return invalid("alpha must be positive");
    }
    let g = reduced_gradient(spec, ops, u, y, q, opts)?;
    let target = projected_control(spec, &g)?;
    norm_l2_omega_t(&u.add_scaled(-1.0, &target), ops, &spec.time)
}

/// Strongly active points and the sign classification of the multiplier `αu + yq`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveSetReport {
    pub tau: f64,
    #[serde(skip)]
    pub mask: Vec<Vec<bool>>,
    #[serde(skip)]
    pub multiplier: Vec<Vec<f64>>,
    /// Multiplier > τ (lower bound expected).
    pub lower_active: usize,
    /// Multiplier < -τ (upper bound expected).
    pub upper_active: usize,
    pub inactive: usize,
}

impl ActiveSetReport {
    pub fn total(&self) -> usize {
        self.lower_active + self.upper_active + self.inactive
    }
}

pub fn active_set(grad: &GradientField, tau: f64) -> Result<ActiveSetReport> {
    if !(tau >= 0.0) {
        return invalid(format!("tau must be nonnegative, got {tau}"));
    }
    let multiplier = grad.values.values.clone();
    let mut report = ActiveSetReport { tau, mask: Vec::new(), multiplier, lower_active: 0, upper_active: 0, inactive: 0 };
    report.mask = report
        .multiplier
        .iter()
        .map(|row| {
            row.iter()
                .map(|&mu| {
                    if mu > tau {
                        report.lower_active += 1;
                        true
                    } else if mu < -tau {
                        report.upper_active += 1;
                        true
                    } else {
                        report.inactive += 1;
                        false
                    }
                })
                .collect()
        })
        .collect();
    Ok(report)
}

/// Membership in the τ-critical cone: `v ≥ 0` where `u = m`, `v ≤ 0` where `u = M`,
/// and `v = 0` on the strongly active set.
pub fn critical_cone_test(v: &ControlField, u: &ControlField, report: &ActiveSetReport) -> bool {
    if !v.same_shape(u) || report.mask.len() != u.n_slabs() {
        return false;
    }
    for ((vr, ur), mr) in v.values.iter().zip(&u.values).zip(&report.mask) {
        for ((&vv, &uu), &active) in vr.iter().zip(ur).zip(mr) {
            if active && vv != 0.0 {
                return false;
            }
            if uu == u.lower && vv < 0.0 {
                return false;
            }
            if uu == u.upper && vv > 0.0 {
                return false;
            }
        }
    }
    true
}

/// Makes `v` a member of the τ-critical cone by zeroing the active set and
/// clipping the sign at the bounds.
pub fn restrict_to_cone(v: &ControlField, u: &ControlField, report: &ActiveSetReport) -> ControlField {
    let mut out = v.clone();
    for ((vr, ur), mr) in out.values.iter_mut().zip(&u.values).zip(&report.mask) {
        for ((vv, &uu), &active) in vr.iter_mut().zip(ur).zip(mr) {
            if active || (uu == u.lower && *vv < 0.0) || (uu == u.upper && *vv > 0.0) {
                *vv = 0.0;
            }
        }
    }
    out
}

/// Pointwise audit of the first-order sign conditions: multiplier > τ ⇒ u = m,
/// multiplier < -τ ⇒ u = M, otherwise u ∈ [m, M].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrichotomyAudit {
    pub tolerance: f64,
    pub lower_branch: usize,
    pub upper_branch: usize,
    pub interior_branch: usize,
    pub violations: usize,
    /// Largest distance from the bound required by the active branches.
    pub worst_gap: f64,
}

impl TrichotomyAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn trichotomy_audit(u: &ControlField, grad: &GradientField, tolerance: f64) -> TrichotomyAudit {
    let mut audit = TrichotomyAudit {
        tolerance,
        lower_branch: 0,
        upper_branch: 0,
        interior_branch: 0,
        violations: 0,
        worst_gap: 0.0,
    };
    for (ur, gr) in u.values.iter().zip(&grad.values.values) {
        for (&uu, &mu) in ur.iter().zip(gr) {
            let gap = if mu > tolerance {
                audit.lower_branch += 1;
                (uu - u.lower).abs()
            } else if mu < -tolerance {
                audit.upper_branch += 1;
                (u.upper - uu).abs()
            } else {
                audit.interior_branch += 1;
                (u.lower - uu).max(uu - u.upper).max(0.0)
            };
            audit.worst_gap = audit.worst_gap.max(gap);
            if gap > tolerance {
                audit.violations += 1;
            }
        }
    }
    audit
}

/// Second-order sufficiency threshold `4e^{3(β+1)T}(‖y⁰‖_∞ + ‖y^d‖_∞)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SscReport {
    pub beta: f64,
    pub horizon: f64,
    pub y0_sup: f64,
    pub yd_sup: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub satisfied: bool,
    /// α - threshold
    pub margin: f64,
}

pub fn ssc_threshold(spec: &ProblemSpec) -> SscReport {
    let (y0, yd) = (spec.y0_sup(), spec.yd_sup());
    let threshold = 4.0 * (3.0 * (spec.beta + 1.0) * spec.time.horizon).exp() * (y0 + yd);
    let margin = spec.alpha - threshold;
    SscReport {
        beta: spec.beta,
        horizon: spec.time.horizon,
        y0_sup: y0,
        yd_sup: yd,
        threshold,
        alpha: spec.alpha,
        satisfied: margin > 0.0,
        margin,
    }
}
