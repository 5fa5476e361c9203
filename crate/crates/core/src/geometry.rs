//! Mesh, degenerate diffusion coefficient, control region and the weighted
//! piecewise-linear finite-element operators on Ω = (-1, 1).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Tridiagonal;

/// Degenerate diffusion coefficient a(x) on [-1, 1] with a(±1) = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionCoefficient {
    /// a(x) = 1 - x², the Budyko–Sellers diffusion.
    Budyko,
    /// a(x) = (1 - x²)^p with p ≥ 1.
    Power { p: f64 },
    /// Piecewise-linear interpolation of tabulated samples spanning [-1, 1].
    Tabulated { x: Vec<f64>, a: Vec<f64> },
}

impl DiffusionCoefficient {
    pub fn power(p: f64) -> Result<Self> {
        let c = Self::Power { p };
        c.validate()?;
        Ok(c)
    }

    pub fn tabulated(x: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let c = Self::Tabulated { x, a };
        c.validate()?;
        Ok(c)
    }

    /// Checks the strong-degeneracy assumptions.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Budyko => Ok(()),
            Self::Power { p } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return invalid(format!("power coefficient needs p >= 1, got {p}"));
                }
                Ok(())
            }
            Self::Tabulated { x, a } => {
                if x.len() != a.len() || x.len() < 3 {
                    return invalid("tabulated coefficient needs matching x/a arrays of length >= 3");
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return invalid("tabulated coefficient abscissae must be strictly increasing");
                }
                let n = x.len();
                if x[0] != -1.0 || x[n - 1] != 1.0 {
                    return invalid("tabulated coefficient must span exactly [-1, 1]");
                }
                if a[0] != 0.0 || a[n - 1] != 0.0 {
                    return invalid("tabulated coefficient must vanish at x = -1 and x = 1");
                }
                if let Some(v) = a[1..n - 1].iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return invalid(format!("tabulated coefficient must be positive inside (-1, 1), got {v}"));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Budyko => 1.0 - x * x,
            Self::Power { p } => (1.0 - x * x).max(0.0).powf(*p),
            Self::Tabulated { x: xs, a } => {
                if x <= xs[0] {
                    return a[0];
                }
                let n = xs.len();
                if x >= xs[n - 1] {
                    return a[n - 1];
                }
                let k = xs.partition_point(|&t| t <= x) - 1;
                let s = (x - xs[k]) / (xs[k + 1] - xs[k]);
                a[k] + s * (a[k + 1] - a[k])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Grading {
    #[default]
    Uniform,
    /// x = sin(πξ/2) applied to a uniform ξ grid; clusters nodes at ±1.
    BoundaryRefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
}

impl Mesh1D {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return invalid(format!("a mesh needs at least 2 cells, got {}", nodes.len().saturating_sub(1)));
        }
        if nodes[0] != -1.0 || *nodes.last().unwrap() != 1.0 {
            return invalid("mesh must span exactly [-1, 1]");
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("mesh nodes must be strictly increasing");
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn width(&self, cell: usize) -> f64 {
        self.nodes[cell + 1] - self.nodes[cell]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the node nearest to `x`; ties go to the left node.
    pub fn nearest_node(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|&t| t < x);
        if k == 0 {
            return 0;
        }
        if k >= self.nodes.len() {
            return self.nodes.len() - 1;
        }
        if (x - self.nodes[k - 1]) <= (self.nodes[k] - x) {
            k - 1
        } else {
            k
        }
    }
}

pub fn build_mesh(n_cells: usize, grading: Grading) -> Result<Mesh1D> {
    if n_cells < 2 {
        return invalid(format!("n_cells must be >= 2, got {n_cells}"));
    }
    let mut nodes: Vec<f64> = (0..=n_cells)
        .map(|i| {
            let xi = -1.0 + 2.0 * i as f64 / n_cells as f64;
            match grading {
                Grading::Uniform => xi,
                Grading::BoundaryRefined => (std::f64::consts::FRAC_PI_2 * xi).sin(),
            }
        })
        .collect();
    nodes[0] = -1.0;
    nodes[n_cells] = 1.0;
    if n_cells.is_multiple_of(2) {
        nodes[n_cells / 2] = 0.0;
    }
    Mesh1D::from_nodes(nodes)
}

/// Finite union of closed subintervals of [-1, 1] on which the control acts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct ControlRegion {
    intervals: Vec<(f64, f64)>,
}

impl ControlRegion {
    /// Sorts and merges overlapping or touching intervals.
    pub fn new(intervals: &[(f64, f64)]) -> Result<Self> {
        if intervals.is_empty() {
            return invalid("control region must contain at least one interval");
        }
        let mut iv: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for &(lo, hi) in intervals {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return invalid(format!("control interval [{lo}, {hi}] is empty or malformed"));
            }
            if lo < -1.0 || hi > 1.0 {
                return invalid(format!("control interval [{lo}, {hi}] leaves [-1, 1]"));
            }
            iv.push((lo, hi));
        }
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
        for (lo, hi) in iv {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Ok(Self { intervals: merged })
    }

    pub fn whole_domain() -> Self {
        Self { intervals: vec![(-1.0, 1.0)] }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    pub fn indicator(&self, x: f64) -> f64 {
        if self.contains(x) {
            1.0
        } else {
            0.0
        }
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }
}

impl TryFrom<Vec<[f64; 2]>> for ControlRegion {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        let iv: Vec<(f64, f64)> = v.into_iter().map(|[a, b]| (a, b)).collect();
        Self::new(&iv)
    }
}

impl From<ControlRegion> for Vec<[f64; 2]> {
    fn from(r: ControlRegion) -> Self {
        r.intervals.into_iter().map(|(a, b)| [a, b]).collect()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Weighted stiffness in conductance form: cell c contributes
/// `k[c] * (e_c - e_{c+1})(e_c - e_{c+1})ᵀ` with `k[c] = ∫_c a / h_c²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stiffness {
    pub conductance: Vec<f64>,
}

impl Stiffness {
    /// `K y` evaluated cell by cell through differences, so constants map to zero exactly.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        for (c, k) in self.conductance.iter().enumerate() {
            let flux = k * (y[c] - y[c + 1]);
            out[c] += flux;
            out[c + 1] -= flux;
        }
        out
    }

    /// `yᵀ K y`, summed from squared differences (never negative).
    pub fn energy(&self, y: &[f64]) -> f64 {
        self.conductance
            .iter()
            .enumerate()
            .map(|(c, k)| k * (y[c] - y[c + 1]).powi(2))
            .sum()
    }

    pub fn to_tridiagonal(&self) -> Tridiagonal {
        let n = self.conductance.len() + 1;
        let mut t = Tridiagonal::zeros(n);
        for (c, &k) in self.conductance.iter().enumerate() {
            t.diag[c] += k;
            t.diag[c + 1] += k;
            t.lower[c] = -k;
            t.upper[c] = -k;
        }
        t
    }
}

/// Weighted finite-element operators for one mesh, coefficient and control region.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub mesh: Mesh1D,
    /// Consistent mass matrix.
    pub mass: Tridiagonal,
    /// Row sums of `mass`.
    pub lumped_mass: Vec<f64>,
    pub stiffness: Stiffness,
    /// Mass matrix restricted to control cells.
    pub region_mass: Tridiagonal,
    /// Row sums of `region_mass`; the weights of the bilinear term and of the control inner product.
    pub region_lumped: Vec<f64>,
    /// Whether each cell belongs to the snapped control region.
    pub region_cells: Vec<bool>,
    /// Mesh node indices carrying control values (nodes of control cells), ascending.
    pub control_nodes: Vec<usize>,
    /// Mapped quadrature points and weights per cell.
    pub quadrature: Vec<Vec<(f64, f64)>>,
    /// Snapping diagnostics.
    pub warnings: Vec<String>,
}

impl AssembledOperators {
    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn n_control(&self) -> usize {
        self.control_nodes.len()
    }

    /// Lumped region weights restricted to control nodes.
    pub fn control_weights(&self) -> Vec<f64> {
        self.control_nodes.iter().map(|&i| self.region_lumped[i]).collect()
    }

    pub fn stiffness_matrix(&self) -> Tridiagonal {
        self.stiffness.to_tridiagonal()
    }

    /// Measure of the snapped control region.
    pub fn region_measure(&self) -> f64 {
        self.region_lumped.iter().sum()
    }
}

pub fn assemble(
    mesh: &Mesh1D,
    coefficient: &DiffusionCoefficient,
    region: &ControlRegion,
    quad_order: usize,
) -> Result<AssembledOperators> {
    if quad_order < 2 {
        return invalid(format!("quad_order must be >= 2, got {quad_order}"));
    }
    let rule = gauss_legendre(quad_order);
    let n_cells = mesh.n_cells();
    let n = mesh.n_nodes();
    let x = mesh.nodes();

    let mut quadrature = Vec::with_capacity(n_cells);
    let mut conductance = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let h = mesh.width(c);
        let mid = 0.5 * (x[c] + x[c + 1]);
        let pts: Vec<(f64, f64)> = rule.iter().map(|&(s, w)| (mid + 0.5 * h * s, 0.5 * h * w)).collect();
        let mut integral = 0.0;
        for &(xq, wq) in &pts {
            let a = coefficient.eval(xq);
            if !(a >= 0.0) {
                return Err(Error::AssemblyFailure { x: xq, value: a });
            }
            integral += wq * a;
        }
        conductance.push(integral / (h * h));
        quadrature.push(pts);
    }

    let (region_cells, warnings) = snap_region(mesh, region);

    let mut mass = Tridiagonal::zeros(n);
    let mut region_mass = Tridiagonal::zeros(n);
    for c in 0..n_cells {
        let h = mesh.width(c);
        for m in [&mut mass].into_iter().chain(region_cells[c].then_some(&mut region_mass)) {
            m.diag[c] += h / 3.0;
            m.diag[c + 1] += h / 3.0;
            m.lower[c] += h / 6.0;
            m.upper[c] += h / 6.0;
        }
    }
    let lumped_mass = mass.row_sums();
    let region_lumped = region_mass.row_sums();
    let control_nodes: Vec<usize> = (0..n).filter(|&i| region_lumped[i] > 0.0).collect();

    Ok(AssembledOperators {
        mesh: mesh.clone(),
        mass,
        lumped_mass,
        stiffness: Stiffness { conductance },
        region_mass,
        region_lumped,
        region_cells,
        control_nodes,
        quadrature,
        warnings,
    })
}

/// Snaps each interval's endpoints to the nearest nodes and marks the cells in between.
fn snap_region(mesh: &Mesh1D, region: &ControlRegion) -> (Vec<bool>, Vec<String>) {
    let x = mesh.nodes();
    let mut cells = vec![false; mesh.n_cells()];
    let mut warnings = Vec::new();
    for &(lo, hi) in region.intervals() {
        let mut i0 = mesh.nearest_node(lo);
        let mut i1 = mesh.nearest_node(hi);
        if i0 == i1 {
            // Interval thinner than a cell: keep the cell holding its midpoint.
            let mid = 0.5 * (lo + hi);
            let c = (x.partition_point(|&t| t <= mid).max(1) - 1).min(mesh.n_cells() - 1);
            i0 = c;
            i1 = c + 1;
        }
        for (orig, snapped) in [(lo, i0), (hi, i1)] {
            let moved = (x[snapped] - orig).abs();
            let local = if snapped == 0 {
                mesh.width(0)
            } else if snapped == mesh.n_nodes() - 1 {
                mesh.width(snapped - 1)
            } else {
                mesh.width(snapped - 1).min(mesh.width(snapped))
            };
            if moved > local {
                warnings.push(format!(
                    "control region endpoint {orig} snapped to node {} (moved {moved:.3e}, more than one cell width)",
                    x[snapped]
                ));
            }
        }
        for c in cells.iter_mut().take(i1).skip(i0) {
            *c = true;
        }
    }
    (cells, warnings)
}
