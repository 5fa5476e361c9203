//! Run configuration: a single JSON document with strict schema checks.
//! Physical parameters are required; only solver tolerances have defaults.

use std::path::PathBuf;

use degenerate_control::optimizer::{random_control, CertifyOptions, OptimizerOptions};
use degenerate_control::solvers::solve_state;
use degenerate_control::{
    assemble, build_mesh, AssembledOperators, ControlField, ControlRegion, DiffusionCoefficient, Grading, ProblemSpec,
    SchemeOptions, TimeGrid,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub scheme: SchemeOptions,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub coefficient: DiffusionCoefficient,
    pub omega: ControlRegion,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_cells: usize,
    pub grading: Grading,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub y0: FieldSpec,
    pub yd: FieldSpec,
    /// Control to simulate (`solve`) or to start from (`optimize`).
    pub control: ControlSpec,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    3
}

/// Spatial profile of the initial datum or the target.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    Gaussian { center: f64, width: f64, height: f64 },
    /// `amplitude * cos(modes * π x / 2)`
    Cosine { amplitude: f64, modes: f64 },
    Nodal { values: Vec<f64> },
    /// Terminal state of the problem's own equation driven by `control` up to `horizon`.
    Forward { horizon: f64, control: ControlSpec },
}

/// Space–time control profile.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    Constant { value: f64 },
    /// Constant in time.
    Gaussian { center: f64, width: f64, height: f64 },
    /// `amplitude * sin(π kx x) * cos(π kt t / T)`
    Wave { amplitude: f64, kx: f64, kt: f64 },
    /// Uniform samples in the box, drawn from the optimizer seed.
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub max_principle_runs: usize,
    pub gradient_pairs: usize,
    pub hessian_directions: usize,
    pub lipschitz_pairs: usize,
    pub convergence_levels: usize,
    pub gradient_eps: Vec<f64>,
    pub hessian_eps: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_principle_runs: 1000,
            gradient_pairs: 3,
            hessian_directions: 4,
            lipschitz_pairs: 100,
            convergence_levels: 4,
            gradient_eps: (0..16).map(|k| 0.1 * 0.5_f64.powi(k)).collect(),
            hessian_eps: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub dump_trajectories: bool,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if p.n_cells == 0 || p.n_steps == 0 {
            return config_err("n_cells and n_steps must be positive");
        }
        if p.quad_order < 2 {
            return config_err(format!("quad_order must be at least 2, got {}", p.quad_order));
        }
        self.scheme.validate()?;
        self.optimizer.validate()?;
        if !(self.certify.growth_radius > 0.0) {
            return config_err("certify.growth_radius must be positive");
        }
        let v = &self.verify;
        if v.gradient_eps.is_empty() || v.hessian_eps.is_empty() {
            return config_err("verify step grids must not be empty");
        }
        if v.convergence_levels < 3 {
            return config_err(format!("verify.convergence_levels must be at least 3, got {}", v.convergence_levels));
        }
        Ok(())
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.optimizer.seed = seed;
        self.certify.seed = seed;
        self.verify.seed = seed;
    }
}

fn profile(spec: &FieldSpec, x: f64) -> Option<f64> {
    match *spec {
        FieldSpec::Constant { value } => Some(value),
        FieldSpec::Gaussian { center, width, height } => Some(height * (-((x - center) / width).powi(2)).exp()),
        FieldSpec::Cosine { amplitude, modes } => Some(amplitude * (modes * std::f64::consts::FRAC_PI_2 * x).cos()),
        FieldSpec::Nodal { .. } | FieldSpec::Forward { .. } => None,
    }
}

impl FieldSpec {
    /// Pointwise formula, when the profile has one.
    pub fn function(&self) -> Option<impl Fn(f64) -> f64 + '_> {
        profile(self, 0.0).map(|_| move |x| profile(self, x).unwrap_or(f64::NAN))
    }

    fn check(&self, what: &str) -> Result<(), CliError> {
        if let FieldSpec::Gaussian { width, .. } = self {
            if !(*width > 0.0) {
                return config_err(format!("{what}: gaussian width must be positive"));
            }
        }
        Ok(())
    }
}

impl ControlSpec {
    /// Closed form `v(t, x)` for deterministic profiles.
    pub fn eval(&self, t: f64, x: f64, horizon: f64) -> Option<f64> {
        match *self {
            ControlSpec::Constant { value } => Some(value),
            ControlSpec::Gaussian { center, width, height } => Some(height * (-((x - center) / width).powi(2)).exp()),
            ControlSpec::Wave { amplitude, kx, kt } => {
                let pi = std::f64::consts::PI;
                Some(amplitude * (pi * kx * x).sin() * (pi * kt * t / horizon).cos())
            }
            ControlSpec::Random => None,
        }
    }
}

/// Everything a command needs, sampled on the configured mesh.
pub struct Problem {
    pub spec: ProblemSpec,
    pub ops: AssembledOperators,
    pub control: ControlField,
    pub opts: SchemeOptions,
}

fn sample_control(
    c: &ControlSpec,
    spec: &ProblemSpec,
    ops: &AssembledOperators,
    seed: u64,
    what: &str,
) -> Result<ControlField, CliError> {
    if let ControlSpec::Gaussian { width, .. } = c {
        if !(*width > 0.0) {
            return config_err(format!("{what}: gaussian width must be positive"));
        }
    }
    let v = match c {
        ControlSpec::Random => random_control(spec, ops, seed),
        _ => ControlField::from_fn(ops, &spec.time, spec.lower, spec.upper, |t, x| {
            c.eval(t, x, spec.time.horizon).unwrap_or(f64::NAN)
        }),
    };
    if !v.is_finite() {
        return config_err(format!("{what}: control profile has non-finite values"));
    }
    if !v.is_feasible() {
        return config_err(format!(
            "{what}: control profile leaves the box [{}, {}] (sup |v| = {})",
            spec.lower,
            spec.upper,
            v.max_abs()
        ));
    }
    check_guard(spec.time.dt(), v.max_abs(), what)?;
    Ok(v)
}

fn check_guard(dt: f64, sup: f64, what: &str) -> Result<(), CliError> {
    if !(dt * sup < 1.0) {
        return config_err(format!(
            "{what}: solvability guard violated, dt * ||v||_inf = {dt} * {sup} = {} >= 1",
            dt * sup
        ));
    }
    Ok(())
}

impl Problem {
    /// Builds the mesh, operators and data. `whole_box` additionally checks the
    /// solvability guard for every admissible control, as the optimizer may
    /// visit the bounds.
    pub fn build(cfg: &RunConfig, whole_box: bool) -> Result<Self, CliError> {
        let p = &cfg.problem;
        let mesh = build_mesh(p.n_cells, p.grading)?;
        p.coefficient.validate()?;
        let ops = assemble(&mesh, &p.coefficient, &p.omega, p.quad_order)?;
        let time = TimeGrid::new(p.horizon, p.n_steps)?;
        p.y0.check("y0")?;
        p.yd.check("yd")?;

        let nodes = mesh.nodes();
        let sample = |f: &FieldSpec, what: &str| -> Result<Option<Vec<f64>>, CliError> {
            match f {
                FieldSpec::Nodal { values } if values.len() != nodes.len() => config_err(format!(
                    "{what}: nodal table has {} values, the mesh has {} nodes",
                    values.len(),
                    nodes.len()
                )),
                FieldSpec::Nodal { values } => Ok(Some(values.clone())),
                FieldSpec::Forward { .. } => Ok(None),
                _ => Ok(Some(nodes.iter().map(|&x| profile(f, x).unwrap_or(f64::NAN)).collect())),
            }
        };
        let Some(y0) = sample(&p.y0, "y0")? else {
            return config_err("y0: forward profiles are only allowed for the target");
        };
        let yd_direct = sample(&p.yd, "yd")?;
        let mut spec = ProblemSpec::new(
            p.coefficient.clone(),
            p.omega.clone(),
            time,
            p.lower,
            p.upper,
            p.alpha,
            y0.clone(),
            yd_direct.clone().unwrap_or(y0),
        )?;
        let opts = cfg.scheme;

        if let FieldSpec::Forward { horizon, control } = &p.yd {
            let mut fwd = spec.clone();
            fwd.time = TimeGrid::new(*horizon, p.n_steps)?;
            let v = sample_control(control, &fwd, &ops, cfg.optimizer.seed, "yd.control")?;
            spec.yd = solve_state(&fwd, &ops, &v, &opts)?.last().to_vec();
        }

        let control = sample_control(&p.control, &spec, &ops, cfg.optimizer.seed, "control")?;
        if whole_box {
            check_guard(spec.time.dt(), spec.beta, "box")?;
        }
        Ok(Problem { spec, ops, control, opts })
    }
}

/// Applies `key=value` to a copy of the configuration.
pub fn with_parameter(cfg: &RunConfig, key: &str, value: &str) -> Result<RunConfig, CliError> {
    let mut out = cfg.clone();
    let num = || value.parse::<f64>().map_err(|_| CliError::Config(format!("{key}: `{value}` is not a number")));
    let count = || {
        value.parse::<usize>().map_err(|_| CliError::Config(format!("{key}: `{value}` is not a positive integer")))
    };
    match key {
        "alpha" => out.problem.alpha = num()?,
        "horizon" => out.problem.horizon = num()?,
        "lower" => out.problem.lower = num()?,
        "upper" => out.problem.upper = num()?,
        "n_cells" => out.problem.n_cells = count()?,
        "n_steps" => out.problem.n_steps = count()?,
        _ => {
            return config_err(format!(
                "unknown sweep parameter `{key}` (expected alpha, horizon, lower, upper, n_cells or n_steps)"
            ))
        }
    }
    out.validate()?;
    Ok(out)
}
