//! Space–time grid functions, the problem description and the norms used by
//! the stability and optimality estimates.
//!
//! Controls are piecewise constant in time: slab `s` covers `(t_s, t_{s+1}]`
//! and holds one value per control node. Their inner product is the exact
//! slab rule in time with the lumped region mass in space. Trajectories live
//! on every time level and every mesh node; their space–time norms use
//! trapezoidal weights and the consistent mass matrix.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{AssembledOperators, ControlRegion, DiffusionCoefficient};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return invalid(format!("horizon T must be positive, got {horizon}"));
        }
        if n_steps < 1 {
            return invalid("n_steps must be >= 1");
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of level `n`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    /// Trapezoidal weight of level `n` (multiplied by dt).
    pub fn trapezoid_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.n_steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// Optimization variable: one value per (time slab, control node).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub values: Vec<Vec<f64>>,
    pub lower: f64,
    pub upper: f64,
}

impl ControlField {
    pub fn zeros(n_slabs: usize, n_control: usize, lower: f64, upper: f64) -> Self {
        Self::constant(n_slabs, n_control, lower, upper, 0.0)
    }

    pub fn constant(n_slabs: usize, n_control: usize, lower: f64, upper: f64, c: f64) -> Self {
        Self { values: vec![vec![c; n_control]; n_slabs], lower, upper }
    }

    /// Samples `f(t, x)` at the slab end time and each control node.
    pub fn from_fn(
        ops: &AssembledOperators,
        time: &TimeGrid,
        lower: f64,
        upper: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let x = ops.mesh.nodes();
        let values = (0..time.n_steps)
            .map(|s| {
                let t = time.time(s + 1);
                ops.control_nodes.iter().map(|&i| f(t, x[i])).collect()
            })
            .collect();
        Self { values, lower, upper }
    }

    pub fn like(&self, c: f64) -> Self {
        Self::constant(self.n_slabs(), self.n_control(), self.lower, self.upper, c)
    }

    pub fn n_slabs(&self) -> usize {
        self.values.len()
    }

    pub fn n_control(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_slabs() == other.n_slabs() && self.values.iter().zip(&other.values).all(|(a, b)| a.len() == b.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.values.iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_feasible(&self) -> bool {
        self.iter().all(|&v| self.lower <= v && v <= self.upper)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect(),
            lower: self.lower,
            upper: self.upper,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
            lower: self.lower,
            upper: self.upper,
        }
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    /// Scatters slab `s` onto all mesh nodes (zero outside the control region).
    pub fn slab_on_mesh(&self, s: usize, ops: &AssembledOperators) -> Vec<f64> {
        let mut full = vec![0.0; ops.n_nodes()];
        for (k, &i) in ops.control_nodes.iter().enumerate() {
            full[i] = self.values[s][k];
        }
        full
    }

    pub fn write_csv<W: Write>(&self, mut w: W, ops: &AssembledOperators, time: &TimeGrid) -> io::Result<()> {
        writeln!(w, "t,x,value")?;
        let x = ops.mesh.nodes();
        for (s, row) in self.values.iter().enumerate() {
            let t = time.time(s + 1);
            for (k, &i) in ops.control_nodes.iter().enumerate() {
                writeln!(w, "{t},{},{}", x[i], row[k])?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    State,
    Adjoint,
    Linearized,
    SecondLinearized,
}

/// Grid function on every time level `0..=n_steps` and every mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub values: Vec<Vec<f64>>,
    pub role: Role,
}

impl Trajectory {
    pub fn zeros(n_levels: usize, n_nodes: usize, role: Role) -> Self {
        Self { values: vec![vec![0.0; n_nodes]; n_levels], role }
    }

    pub fn n_levels(&self) -> usize {
        self.values.len()
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().expect("trajectory has at least one level")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Level-wise `self - other`.
    pub fn difference(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
            role: self.role,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|r| r.iter().map(|v| s * v).collect()).collect(),
            role: self.role,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, ops: &AssembledOperators, time: &TimeGrid) -> io::Result<()> {
        writeln!(w, "t,x,value")?;
        let x = ops.mesh.nodes();
        for (n, row) in self.values.iter().enumerate() {
            let t = time.time(n);
            for (xi, v) in x.iter().zip(row) {
                writeln!(w, "{t},{xi},{v}")?;
            }
        }
        Ok(())
    }
}

/// The continuous problem data, sampled on a mesh.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub coefficient: DiffusionCoefficient,
    pub region: ControlRegion,
    pub time: TimeGrid,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub y0: Vec<f64>,
    pub yd: Vec<f64>,
    /// max(|m|, |M|)
    pub beta: f64,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        coefficient: DiffusionCoefficient,
        region: ControlRegion,
        time: TimeGrid,
        lower: f64,
        upper: f64,
        alpha: f64,
        y0: Vec<f64>,
        yd: Vec<f64>,
    ) -> Result<Self> {
        coefficient.validate()?;
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return invalid(format!("control bounds need m < M, got m = {lower}, M = {upper}"));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return invalid(format!("alpha must be positive, got {alpha}"));
        }
        if y0.iter().chain(&yd).any(|v| !v.is_finite()) {
            return invalid("y0 and yd must be finite");
        }
        if y0.len() != yd.len() {
            return invalid(format!("y0 has {} nodes but yd has {}", y0.len(), yd.len()));
        }
        Ok(Self { coefficient, region, time, lower, upper, alpha, y0, yd, beta: lower.abs().max(upper.abs()) })
    }

    pub fn y0_sup(&self) -> f64 {
        sup(&self.y0)
    }

    pub fn yd_sup(&self) -> f64 {
        sup(&self.yd)
    }

    pub fn zero_control(&self, ops: &AssembledOperators) -> ControlField {
        ControlField::zeros(self.time.n_steps, ops.n_control(), self.lower, self.upper)
    }

    pub fn constant_control(&self, ops: &AssembledOperators, c: f64) -> ControlField {
        ControlField::constant(self.time.n_steps, ops.n_control(), self.lower, self.upper, c)
    }

    pub fn check_mesh(&self, ops: &AssembledOperators) -> Result<()> {
        if self.y0.len() != ops.n_nodes() {
            return invalid(format!("y0 has {} values but the mesh has {} nodes", self.y0.len(), ops.n_nodes()));
        }
        Ok(())
    }
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn check_len(v: &[f64], ops: &AssembledOperators) -> Result<()> {
    if v.len() != ops.n_nodes() {
        return invalid(format!("vector has {} entries, mesh has {} nodes", v.len(), ops.n_nodes()));
    }
    Ok(())
}

/// sqrt(vᵀ M v)
pub fn norm_l2_space(v: &[f64], ops: &AssembledOperators) -> Result<f64> {
    check_len(v, ops)?;
    Ok(ops.mass.quad_form(v, v).max(0.0).sqrt())
}

/// sqrt(vᵀ M v + vᵀ K_a v)
pub fn norm_h1a(v: &[f64], ops: &AssembledOperators) -> Result<f64> {
    check_len(v, ops)?;
    Ok((ops.mass.quad_form(v, v) + ops.stiffness.energy(v)).max(0.0).sqrt())
}

/// max over time levels of the spatial L² norm.
pub fn norm_c_l2(traj: &Trajectory, ops: &AssembledOperators) -> Result<f64> {
    if traj.values.is_empty() {
        return invalid("empty trajectory");
    }
    traj.values.iter().try_fold(0.0_f64, |m, v| Ok(m.max(norm_l2_space(v, ops)?)))
}

fn check_levels(traj: &Trajectory, time: &TimeGrid) -> Result<()> {
    if traj.n_levels() != time.n_steps + 1 {
        return invalid(format!("trajectory has {} levels, time grid needs {}", traj.n_levels(), time.n_steps + 1));
    }
    Ok(())
}

/// L²(Q) norm of a trajectory, trapezoidal in time.
pub fn norm_l2_q(traj: &Trajectory, ops: &AssembledOperators, time: &TimeGrid) -> Result<f64> {
    check_levels(traj, time)?;
    let mut s = 0.0;
    for (n, v) in traj.values.iter().enumerate() {
        check_len(v, ops)?;
        s += time.trapezoid_weight(n) * ops.mass.quad_form(v, v);
    }
    Ok(s.max(0.0).sqrt())
}

/// L²(0,T; H¹_a) norm of a trajectory, trapezoidal in time.
pub fn norm_l2_h1a(traj: &Trajectory, ops: &AssembledOperators, time: &TimeGrid) -> Result<f64> {
    check_levels(traj, time)?;
    let mut s = 0.0;
    for (n, v) in traj.values.iter().enumerate() {
        check_len(v, ops)?;
        s += time.trapezoid_weight(n) * (ops.mass.quad_form(v, v) + ops.stiffness.energy(v));
    }
    Ok(s.max(0.0).sqrt())
}

/// ‖·‖_{C(L²)} + ‖·‖_{L²(H¹_a)}, the energy norm of the stability estimates.
pub fn norm_energy(traj: &Trajectory, ops: &AssembledOperators, time: &TimeGrid) -> Result<f64> {
    Ok(norm_c_l2(traj, ops)? + norm_l2_h1a(traj, ops, time)?)
}

fn check_control(v: &ControlField, ops: &AssembledOperators, time: &TimeGrid) -> Result<()> {
    if v.n_slabs() != time.n_steps || v.values.iter().any(|r| r.len() != ops.n_control()) {
        return invalid(format!(
            "control shape does not match {} slabs x {} control nodes",
            time.n_steps,
            ops.n_control()
        ));
    }
    Ok(())
}

/// Discrete L²(ω_T) inner product: Σ_s Δt Σ_i b_i a_i c_i.
pub fn inner_omega_t(a: &ControlField, c: &ControlField, ops: &AssembledOperators, time: &TimeGrid) -> Result<f64> {
    check_control(a, ops, time)?;
    check_control(c, ops, time)?;
    let b = ops.control_weights();
    let dt = time.dt();
    Ok(a.values
        .iter()
        .zip(&c.values)
        .map(|(ra, rc)| dt * ra.iter().zip(rc).zip(&b).map(|((x, y), w)| w * (x * y)).sum::<f64>())
        .sum())
}

pub fn norm_l2_omega_t(v: &ControlField, ops: &AssembledOperators, time: &TimeGrid) -> Result<f64> {
    Ok(inner_omega_t(v, v, ops, time)?.max(0.0).sqrt())
}

/// Largest absolute nodal value over all levels.
pub fn norm_linf(values: &[Vec<f64>]) -> Result<f64> {
    if values.is_empty() || values.iter().all(Vec::is_empty) {
        return invalid("empty field");
    }
    Ok(values.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Mass-weighted spatial mean 1ᵀ M v.
pub fn total_mass(v: &[f64], ops: &AssembledOperators) -> f64 {
    dot(&ops.lumped_mass, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble, build_mesh, Grading};

    fn ops(n: usize) -> AssembledOperators {
        let mesh = build_mesh(n, Grading::Uniform).unwrap();
        assemble(&mesh, &DiffusionCoefficient::Budyko, &ControlRegion::whole_domain(), 3).unwrap()
    }

    #[test]
    fn spatial_norms() {
        let o = ops(8);
        assert_eq!(norm_l2_space(&[0.0; 9], &o).unwrap(), 0.0);
        assert!((norm_l2_space(&[1.0; 9], &o).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(norm_h1a(&[1.0; 9], &o).unwrap(), norm_l2_space(&[1.0; 9], &o).unwrap());
        assert!(norm_l2_space(&[1.0; 3], &o).is_err());
    }

    #[test]
    fn identity_interpolant_norms_converge() {
        // ∫x² = 2/3 and ∫(1 - x²)·1 = 4/3.
        let o = ops(512);
        let x = o.mesh.nodes().to_vec();
        assert!((norm_l2_space(&x, &o).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-5);
        assert!((norm_h1a(&x, &o).unwrap() - 2f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn time_norms() {
        let o = ops(4);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ones = Trajectory { values: vec![vec![1.0; 5]; 11], role: Role::State };
        assert!((norm_c_l2(&ones, &o).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert!((norm_l2_q(&ones, &o, &grid).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        let twice = ones.scaled(2.0);
        assert!((norm_c_l2(&twice, &o).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-14);

        let decaying = Trajectory {
            values: (0..=10).map(|n| vec![(-(n as f64) * grid.dt()).exp(); 5]).collect(),
            role: Role::State,
        };
        assert_eq!(norm_c_l2(&decaying, &o).unwrap(), norm_l2_space(&decaying.values[0], &o).unwrap());
        assert!(norm_c_l2(&Trajectory { values: vec![], role: Role::State }, &o).is_err());
    }

    #[test]
    fn control_norms() {
        let o = ops(8);
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let one = ControlField::constant(16, o.n_control(), -2.0, 2.0, 1.0);
        assert!((norm_l2_omega_t(&one, &o, &grid).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        let c = one.map(|v| -1.7 * v);
        assert!((norm_l2_omega_t(&c, &o, &grid).unwrap() - 1.7 * 2f64.sqrt()).abs() < 1e-13);
        assert_eq!(norm_l2_omega_t(&one.like(0.0), &o, &grid).unwrap(), 0.0);

        let part = {
            let mesh = build_mesh(8, Grading::Uniform).unwrap();
            assemble(&mesh, &DiffusionCoefficient::Budyko, &ControlRegion::new(&[(-0.5, 0.25)]).unwrap(), 3).unwrap()
        };
        let grid2 = TimeGrid::new(0.5, 7).unwrap();
        let c = ControlField::constant(7, part.n_control(), -5.0, 5.0, 3.0);
        let expect = 3.0 * (0.75f64 * 0.5).sqrt();
        assert!((norm_l2_omega_t(&c, &part, &grid2).unwrap() - expect).abs() < 1e-13);
        assert!(norm_l2_omega_t(&ControlField::zeros(6, part.n_control(), 0.0, 1.0), &part, &grid2).is_err());
    }

    #[test]
    fn linf() {
        assert_eq!(norm_linf(&[vec![0.0; 3]]).unwrap(), 0.0);
        assert_eq!(norm_linf(&[vec![0.0, -3.0, 1.0], vec![2.0, 0.0, 0.0]]).unwrap(), 3.0);
        assert!(norm_linf(&[]).is_err());
    }

    #[test]
    fn problem_validation() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mk = |m: f64, mm: f64, a: f64| {
            ProblemSpec::new(
                DiffusionCoefficient::Budyko,
                ControlRegion::whole_domain(),
                grid,
                m,
                mm,
                a,
                vec![1.0; 3],
                vec![0.0; 3],
            )
        };
        assert!(mk(-1.0, 1.0, 1.0).is_ok());
        assert!(mk(1.0, 1.0, 1.0).is_err());
        assert!(mk(-1.0, 1.0, 0.0).is_err());
        assert_eq!(mk(-3.0, 1.0, 1.0).unwrap().beta, 3.0);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }
}
