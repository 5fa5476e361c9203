//! θ-scheme time stepping for the state, inhomogeneous state, adjoint,
//! linearized and second linearized equations.
//!
//! Step `s` (slab `(t_s, t_{s+1}]`, control `v_s`) reads
//!
//! ```text
//! A_s y^{s+1} = c E_s y^s + Δt·source_s
//! A_s = (1 + θΔt r) M + θΔt (K_a - B(v_s))
//! E_s = (1 - (1-θ)Δt r) M - (1-θ)Δt (K_a - B(v_s))
//! ```
//!
//! with `B(v) = diag(b ⊙ v)`, `b` the lumped region mass, `c = e^{rΔt}` and
//! `r` the optional exponential shift. The adjoint marches the transpose of
//! this recursion backwards, so gradients of the discrete cost are exact.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{ControlField, ProblemSpec, Role, TimeGrid, Trajectory};
use crate::geometry::AssembledOperators;
use crate::linalg::{axpy, Tridiagonal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    Consistent,
    #[default]
    Lumped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeOptions {
    pub theta: f64,
    pub mass: MassKind,
    pub shift_r: f64,
    /// Relative residual accepted from each tridiagonal solve.
    pub linear_solver_tol: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self { theta: 1.0, mass: MassKind::Lumped, shift_r: 0.0, linear_solver_tol: 1e-10 }
    }
}

impl SchemeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.theta) {
            return invalid(format!("theta must lie in [1/2, 1], got {}", self.theta));
        }
        if !(self.shift_r.is_finite() && self.shift_r >= 0.0) {
            return invalid(format!("shift_r must be nonnegative, got {}", self.shift_r));
        }
        if !(self.linear_solver_tol > 0.0) {
            return invalid("linear_solver_tol must be positive");
        }
        Ok(())
    }
}

/// Step operators of one discretization. Cheap to build; borrow-only.
#[derive(Debug, Clone)]
pub struct Scheme<'a> {
    pub ops: &'a AssembledOperators,
    pub opts: SchemeOptions,
    pub time: TimeGrid,
    /// Mass matrix of the time derivative (consistent or lumped).
    pub mass: Tridiagonal,
    stiffness: Tridiagonal,
    /// e^{rΔt}
    pub growth: f64,
}

impl<'a> Scheme<'a> {
    pub fn new(ops: &'a AssembledOperators, time: TimeGrid, opts: SchemeOptions) -> Result<Self> {
        opts.validate()?;
        let mass = match opts.mass {
            MassKind::Consistent => ops.mass.clone(),
            MassKind::Lumped => Tridiagonal::from_diagonal(ops.lumped_mass.clone()),
        };
        Ok(Self {
            ops,
            opts,
            time,
            mass,
            stiffness: ops.stiffness_matrix(),
            growth: (opts.shift_r * time.dt()).exp(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    /// `(A_s, E_s)` for the control slab `v` given on all mesh nodes.
    pub fn step_matrices(&self, v: &[f64]) -> (Tridiagonal, Tridiagonal) {
        let dt = self.dt();
        let th = self.opts.theta;
        let r = self.opts.shift_r;
        let mut a = self.mass.combine(1.0 + th * dt * r, &self.stiffness, th * dt);
        let mut e = self.mass.combine(1.0 - (1.0 - th) * dt * r, &self.stiffness, -(1.0 - th) * dt);
        let bv: Vec<f64> = self.ops.region_lumped.iter().zip(v).map(|(b, v)| b * v).collect();
        a.add_diagonal(-th * dt, &bv);
        e.add_diagonal((1.0 - th) * dt, &bv);
        (a, e)
    }

    /// `B(v) y = b ⊙ v ⊙ y`
    pub fn bilinear(&self, v: &[f64], y: &[f64]) -> Vec<f64> {
        self.ops.region_lumped.iter().zip(v).zip(y).map(|((b, v), y)| b * v * y).collect()
    }

    /// θ-average `θ y^{s+1} + c(1-θ) y^s` that multiplies the control on slab `s`.
    pub fn theta_average(&self, before: &[f64], after: &[f64]) -> Vec<f64> {
        let th = self.opts.theta;
        let c = self.growth * (1.0 - th);
        after.iter().zip(before).map(|(a, b)| th * a + c * b).collect()
    }

    pub(crate) fn checked_solve(&self, a: &Tridiagonal, rhs: &[f64], step: usize) -> Result<Vec<f64>> {
        let x = a.solve(rhs, step)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure { step, reason: "non-finite values (overflow)".into() });
        }
        let ax = a.matvec(&x);
        let scale = rhs.iter().chain(&ax).fold(0.0_f64, |m, v| m.max(v.abs()));
        let res = ax.iter().zip(rhs).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        if res > self.opts.linear_solver_tol * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::StepFailure {
                step,
                reason: format!("linear solve residual {res:e} exceeds tolerance"),
            });
        }
        Ok(x)
    }

    fn check_guard(&self, v: &ControlField) -> Result<()> {
        let sup = v.max_abs();
        let dt = self.dt();
        if !(dt * sup < 1.0) {
            return invalid(format!(
                "solvability guard violated: dt * ||v||_inf = {dt} * {sup} = {} >= 1",
                dt * sup
            ));
        }
        Ok(())
    }

    fn check_control(&self, v: &ControlField) -> Result<()> {
        if v.n_slabs() != self.time.n_steps || v.values.iter().any(|r| r.len() != self.ops.n_control()) {
            return invalid(format!(
                "control must have {} slabs x {} control nodes",
                self.time.n_steps,
                self.ops.n_control()
            ));
        }
        if !v.is_finite() {
            return invalid("control contains non-finite values");
        }
        Ok(())
    }

    fn check_trajectory(&self, y: &Trajectory, what: &str) -> Result<()> {
        if y.n_levels() != self.time.n_steps + 1 || y.values.iter().any(|r| r.len() != self.ops.n_nodes()) {
            return invalid(format!("{what} trajectory does not match the time grid and mesh"));
        }
        Ok(())
    }

    /// Forward march with `extra(s)` added (already scaled by Δt) to the right-hand side of step `s`.
    fn march(
        &self,
        u: &ControlField,
        init: Vec<f64>,
        role: Role,
        mut extra: impl FnMut(usize, &[f64]) -> Option<Vec<f64>>,
    ) -> Result<Trajectory> {
        let n = self.time.n_steps;
        let mut values = Vec::with_capacity(n + 1);
        values.push(init);
        for s in 0..n {
            let v = u.slab_on_mesh(s, self.ops);
            let (a, e) = self.step_matrices(&v);
            let mut rhs = e.matvec(&values[s]);
            rhs.iter_mut().for_each(|x| *x *= self.growth);
            if let Some(src) = extra(s, &v) {
                axpy(1.0, &src, &mut rhs);
            }
            values.push(self.checked_solve(&a, &rhs, s + 1)?);
        }
        Ok(Trajectory { values, role })
    }
}

fn scheme<'a>(spec: &ProblemSpec, ops: &'a AssembledOperators, opts: &SchemeOptions) -> Result<Scheme<'a>> {
    spec.check_mesh(ops)?;
    Scheme::new(ops, spec.time, *opts)
}

fn check_box(spec: &ProblemSpec, v: &ControlField) -> Result<()> {
    if let Some(bad) = v.iter().find(|&&x| !(spec.lower <= x && x <= spec.upper)) {
        return invalid(format!("control value {bad} outside the box [{}, {}]", spec.lower, spec.upper));
    }
    Ok(())
}

/// Control-to-state map G(v).
pub fn solve_state(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    v: &ControlField,
    opts: &SchemeOptions,
) -> Result<Trajectory> {
    let sch = scheme(spec, ops, opts)?;
    sch.check_control(v)?;
    check_box(spec, v)?;
    sch.check_guard(v)?;
    sch.march(v, spec.y0.clone(), Role::State, |_, _| None)
}

/// State equation with a source `f` on Q (one nodal vector per time level)
/// and initial datum `p0`; the step source is `M f^{s+θ}`.
pub fn solve_state_inhomogeneous(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    v: &ControlField,
    f: &Trajectory,
    p0: &[f64],
    opts: &SchemeOptions,
) -> Result<Trajectory> {
    let sch = scheme(spec, ops, opts)?;
    sch.check_control(v)?;
    check_box(spec, v)?;
    sch.check_guard(v)?;
    sch.check_trajectory(f, "source")?;
    if p0.len() != ops.n_nodes() {
        return invalid("initial datum length does not match the mesh");
    }
    let th = opts.theta;
    let dt = sch.dt();
    sch.march(v, p0.to_vec(), Role::State, |s, _| {
        let fs: Vec<f64> = f.values[s + 1].iter().zip(&f.values[s]).map(|(a, b)| th * a + (1.0 - th) * b).collect();
        Some(sch.mass.matvec(&fs).into_iter().map(|x| dt * x).collect())
    })
}

/// Discrete adjoint: `q[N] = yT`, then `A_{N-1} q[N-1] = M yT` (consistent `M`, the
/// terminal cost metric) and
/// `A_{s-1}ᵀ q[s-1] = c E_sᵀ q[s]` backwards. `q[s]` multiplies slab `s`.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    y_terminal: &[f64],
    opts: &SchemeOptions,
) -> Result<Trajectory> {
    let sch = scheme(spec, ops, opts)?;
    sch.check_control(u)?;
    sch.check_guard(u)?;
    if y_terminal.len() != ops.n_nodes() {
        return invalid("terminal datum length does not match the mesh");
    }
    let n = spec.time.n_steps;
    let mut values = vec![Vec::new(); n + 1];
    values[n] = y_terminal.to_vec();
    // Step matrices are symmetric: the transposes are the matrices themselves.
    let mut rhs = ops.mass.matvec(y_terminal);
    for s in (0..n).rev() {
        let v = u.slab_on_mesh(s, ops);
        let (a, e) = sch.step_matrices(&v);
        let q = sch.checked_solve(&a, &rhs, s)?;
        rhs = e.matvec(&q);
        rhs.iter_mut().for_each(|x| *x *= sch.growth);
        values[s] = q;
    }
    Ok(Trajectory { values, role: Role::Adjoint })
}

/// G'(u)w: zero initial datum, source `B(w) ŷ` on each slab.
pub fn solve_linearized(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    w: &ControlField,
    y: &Trajectory,
    opts: &SchemeOptions,
) -> Result<Trajectory> {
    let sch = scheme(spec, ops, opts)?;
    sch.check_control(u)?;
    sch.check_control(w)?;
    sch.check_guard(u)?;
    sch.check_trajectory(y, "state")?;
    let dt = sch.dt();
    sch.march(u, vec![0.0; ops.n_nodes()], Role::Linearized, |s, _| {
        let ws = w.slab_on_mesh(s, ops);
        let yhat = sch.theta_average(&y.values[s], &y.values[s + 1]);
        Some(sch.bilinear(&ws, &yhat).into_iter().map(|x| dt * x).collect())
    })
}

/// G''(u)[w, h]: zero initial datum, source `B(h) ρ̂_w + B(w) ρ̂_h`.
#[allow(clippy::too_many_arguments)]
pub fn solve_second_linearized(
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    u: &ControlField,
    w: &ControlField,
    h: &ControlField,
    rho_w: &Trajectory,
    rho_h: &Trajectory,
    opts: &SchemeOptions,
) -> Result<Trajectory> {
    let sch = scheme(spec, ops, opts)?;
    for c in [u, w, h] {
        sch.check_control(c)?;
    }
    sch.check_guard(u)?;
    sch.check_trajectory(rho_w, "linearized")?;
    sch.check_trajectory(rho_h, "linearized")?;
    let dt = sch.dt();
    sch.march(u, vec![0.0; ops.n_nodes()], Role::SecondLinearized, |s, _| {
        let ws = w.slab_on_mesh(s, ops);
        let hs = h.slab_on_mesh(s, ops);
        let rw = sch.theta_average(&rho_w.values[s], &rho_w.values[s + 1]);
        let rh = sch.theta_average(&rho_h.values[s], &rho_h.values[s + 1]);
        let mut src = sch.bilinear(&hs, &rw);
        axpy(1.0, &sch.bilinear(&ws, &rh), &mut src);
        Some(src.into_iter().map(|x| dt * x).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{norm_c_l2, norm_energy, norm_l2_omega_t, total_mass};
    use crate::geometry::{assemble, build_mesh, ControlRegion, DiffusionCoefficient, Grading};

    fn setup(n_cells: usize, n_steps: usize, horizon: f64, region: ControlRegion) -> (ProblemSpec, AssembledOperators) {
        let mesh = build_mesh(n_cells, Grading::Uniform).unwrap();
        let ops = assemble(&mesh, &DiffusionCoefficient::Budyko, &region, 3).unwrap();
        let x = mesh.nodes();
        let y0: Vec<f64> = x.iter().map(|x| 1.0 + 0.5 * (2.0 * x).sin()).collect();
        let yd: Vec<f64> = x.iter().map(|x| 0.5 * x).collect();
        let spec = ProblemSpec::new(
            DiffusionCoefficient::Budyko,
            region,
            TimeGrid::new(horizon, n_steps).unwrap(),
            -1.0,
            1.0,
            1.0,
            y0,
            yd,
        )
        .unwrap();
        (spec, ops)
    }

    fn wave(spec: &ProblemSpec, ops: &AssembledOperators, amp: f64) -> ControlField {
        ControlField::from_fn(ops, &spec.time, spec.lower, spec.upper, |t, x| amp * (3.0 * x + t).sin())
    }

    #[test]
    fn constant_state_is_steady() {
        let (mut spec, ops) = setup(16, 10, 1.0, ControlRegion::whole_domain());
        spec.y0 = vec![1.0; 17];
        for mass in [MassKind::Lumped, MassKind::Consistent] {
            let opts = SchemeOptions { mass, ..Default::default() };
            let y = solve_state(&spec, &ops, &spec.zero_control(&ops), &opts).unwrap();
            assert!(y.values.iter().flatten().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn uniform_mode_is_exact() {
        let (mut spec, ops) = setup(12, 20, 1.0, ControlRegion::whole_domain());
        spec.y0 = vec![2.0; 13];
        let lambda = 0.7;
        let dt = spec.time.dt();
        for mass in [MassKind::Lumped, MassKind::Consistent] {
            let opts = SchemeOptions { mass, ..Default::default() };
            let y = solve_state(&spec, &ops, &spec.constant_control(&ops, lambda), &opts).unwrap();
            for (n, row) in y.values.iter().enumerate() {
                let exact = 2.0 * (1.0 - lambda * dt).powi(-(n as i32));
                assert!(row.iter().all(|v| ((v - exact) / exact).abs() < 1e-12), "n = {n}");
            }
        }
    }

    #[test]
    fn guard_and_box() {
        let (spec, ops) = setup(8, 2, 1.0, ControlRegion::whole_domain());
        // dt = 0.5 and v = 1 would be fine for the box but 0.5 < 1 passes the guard.
        assert!(solve_state(&spec, &ops, &spec.constant_control(&ops, 1.0), &SchemeOptions::default()).is_ok());
        let (mut wide, ops) = setup(8, 2, 1.0, ControlRegion::whole_domain());
        wide.upper = 3.0;
        let err = solve_state(&wide, &ops, &wide.constant_control(&ops, 2.0), &SchemeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(ref m) if m.contains("guard")), "{err}");
        let out = spec.constant_control(&ops, 1.5);
        assert!(solve_state(&spec, &ops, &out, &SchemeOptions::default()).is_err());
    }

    #[test]
    fn mass_is_conserved_without_control() {
        let (spec, ops) = setup(32, 40, 1.0, ControlRegion::whole_domain());
        for theta in [0.5, 0.75, 1.0] {
            let opts = SchemeOptions { theta, mass: MassKind::Consistent, ..Default::default() };
            let y = solve_state(&spec, &ops, &spec.zero_control(&ops), &opts).unwrap();
            let m0 = total_mass(&y.values[0], &ops);
            for row in &y.values {
                assert!(((total_mass(row, &ops) - m0) / m0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inhomogeneous_consistency_and_mass_balance() {
        let (spec, ops) = setup(16, 32, 1.0, ControlRegion::new(&[(-0.5, 0.5)]).unwrap());
        let opts = SchemeOptions::default();
        let v = wave(&spec, &ops, 0.8);
        let zero_f = Trajectory::zeros(33, 17, Role::State);
        let a = solve_state(&spec, &ops, &v, &opts).unwrap();
        let b = solve_state_inhomogeneous(&spec, &ops, &v, &zero_f, &spec.y0, &opts).unwrap();
        assert_eq!(a, b);

        let c = 0.3;
        let f = Trajectory { values: vec![vec![c; 17]; 33], role: Role::State };
        let p = solve_state_inhomogeneous(&spec, &ops, &spec.zero_control(&ops), &f, &[0.0; 17], &opts).unwrap();
        let mean = total_mass(p.last(), &ops) / 2.0;
        assert!((mean - c * 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_zero_and_conservation() {
        let (spec, ops) = setup(16, 24, 0.5, ControlRegion::new(&[(-0.3, 0.6)]).unwrap());
        let opts = SchemeOptions::default();
        let u = wave(&spec, &ops, 0.9);
        let q = solve_adjoint(&spec, &ops, &u, &[0.0; 17], &opts).unwrap();
        assert!(q.values.iter().flatten().all(|&v| v == 0.0));

        let yt: Vec<f64> = ops.mesh.nodes().iter().map(|x| x.cos() + x).collect();
        for mass in [MassKind::Lumped, MassKind::Consistent] {
            let opts = SchemeOptions { mass, ..Default::default() };
            let q = solve_adjoint(&spec, &ops, &spec.zero_control(&ops), &yt, &opts).unwrap();
            let sch = Scheme::new(&ops, spec.time, opts).unwrap();
            let w = sch.mass.row_sums();
            let m0 = total_mass(&yt, &ops);
            for row in &q.values[..spec.time.n_steps] {
                let m = crate::linalg::dot(&w, row);
                assert!(((m - m0) / m0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linearized_is_linear_and_bounded() {
        let (spec, ops) = setup(16, 32, 0.5, ControlRegion::new(&[(-0.5, 0.8)]).unwrap());
        let opts = SchemeOptions::default();
        let u = wave(&spec, &ops, 0.6);
        let y = solve_state(&spec, &ops, &u, &opts).unwrap();
        let w1 = ControlField::from_fn(&ops, &spec.time, -1.0, 1.0, |t, x| (5.0 * x * t).cos());
        let w2 = ControlField::from_fn(&ops, &spec.time, -1.0, 1.0, |_, x| x * x - 0.2);
        let r0 = solve_linearized(&spec, &ops, &u, &w1.like(0.0), &y, &opts).unwrap();
        assert!(r0.values.iter().flatten().all(|&v| v == 0.0));
        let r1 = solve_linearized(&spec, &ops, &u, &w1, &y, &opts).unwrap();
        let r2 = solve_linearized(&spec, &ops, &u, &w2, &y, &opts).unwrap();
        let r12 = solve_linearized(&spec, &ops, &u, &w1.add_scaled(1.0, &w2), &y, &opts).unwrap();
        for ((a, b), c) in r1.values.iter().flatten().zip(r2.values.iter().flatten()).zip(r12.values.iter().flatten()) {
            assert!((a + b - c).abs() < 1e-13);
        }
        // ‖ρ‖ ≤ 2 e^{2(‖u‖+1)T} ‖w‖
        let bound = 2.0 * (2.0 * (u.max_abs() + 1.0) * spec.time.horizon).exp()
            * norm_l2_omega_t(&w1, &ops, &spec.time).unwrap();
        assert!(norm_energy(&r1, &ops, &spec.time).unwrap() <= bound);
    }

    #[test]
    fn second_linearized_symmetry_and_zero() {
        let (spec, ops) = setup(12, 16, 0.5, ControlRegion::new(&[(-0.5, 0.5)]).unwrap());
        let opts = SchemeOptions { theta: 0.75, shift_r: 0.4, ..Default::default() };
        let u = wave(&spec, &ops, 0.5);
        let y = solve_state(&spec, &ops, &u, &opts).unwrap();
        let w = ControlField::from_fn(&ops, &spec.time, -1.0, 1.0, |t, x| (2.0 * x - t).sin());
        let h = ControlField::from_fn(&ops, &spec.time, -1.0, 1.0, |t, x| x * t + 0.1);
        let rw = solve_linearized(&spec, &ops, &u, &w, &y, &opts).unwrap();
        let rh = solve_linearized(&spec, &ops, &u, &h, &y, &opts).unwrap();
        let zwh = solve_second_linearized(&spec, &ops, &u, &w, &h, &rw, &rh, &opts).unwrap();
        let zhw = solve_second_linearized(&spec, &ops, &u, &h, &w, &rh, &rw, &opts).unwrap();
        assert_eq!(zwh, zhw);
        let r0 = Trajectory::zeros(17, 13, Role::Linearized);
        let z0 = solve_second_linearized(&spec, &ops, &u, &w.like(0.0), &h, &r0, &rh, &opts).unwrap();
        assert!(z0.values.iter().flatten().all(|&v| v == 0.0));
        assert!(norm_c_l2(&zwh, &ops).unwrap() > 0.0);
    }
}
