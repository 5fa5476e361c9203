//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line
//! (visible with `--nocapture`) and then asserts.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use degenerate_control::fields::{inner_omega_t, norm_l2_omega_t, total_mass};
use degenerate_control::optimizer::{certify, optimize, random_control, random_direction, CertifyOptions, OptimizerOptions};
use degenerate_control::reduced::{hessian_form, reduced_cost, ssc_threshold};
use degenerate_control::solvers::solve_state;
use degenerate_control::verification::{
    check_max_principles, convergence_study, gradient_check, hessian_check, lipschitz_probe, StudyProblem,
};
use degenerate_control::{
    assemble, build_mesh, AssembledOperators, ControlField, ControlRegion, DiffusionCoefficient, Grading, ProblemSpec,
    SchemeOptions, TimeGrid, Trajectory,
};
use rand::{Rng, SeedableRng};
use tempfile::tempdir;

mod common;
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, passed: bool, detail: String) {
    println!("criterion {criterion}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {criterion} failed: {detail}");
}

struct Setup {
    n_cells: usize,
    n_steps: usize,
    horizon: f64,
    region: ControlRegion,
    alpha: f64,
    y0: fn(f64) -> f64,
    yd: fn(f64) -> f64,
}

fn cos_bump(x: f64) -> f64 {
    (FRAC_PI_2 * x).cos()
}

fn tilted(x: f64) -> f64 {
    1.0 - 0.5 * (x + 1.0) * (x + 1.0) * 0.5
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            n_cells: 64,
            n_steps: 128,
            horizon: 1.0,
            region: ControlRegion::new(&[(-0.5, 0.25)]).unwrap(),
            alpha: 1.0,
            y0: cos_bump,
            yd: tilted,
        }
    }
}

impl Setup {
    fn build(&self) -> (ProblemSpec, AssembledOperators) {
        let mesh = build_mesh(self.n_cells, Grading::Uniform).unwrap();
        let ops = assemble(&mesh, &DiffusionCoefficient::Budyko, &self.region, 3).unwrap();
        let x = mesh.nodes();
        let spec = ProblemSpec::new(
            DiffusionCoefficient::Budyko,
            self.region.clone(),
            TimeGrid::new(self.horizon, self.n_steps).unwrap(),
            -1.0,
            1.0,
            self.alpha,
            x.iter().map(|&x| (self.y0)(x)).collect(),
            x.iter().map(|&x| (self.yd)(x)).collect(),
        )
        .unwrap();
        (spec, ops)
    }
}

fn eps_grid() -> Vec<f64> {
    (0..16).map(|k| 0.1 * 0.5_f64.powi(k)).collect()
}

#[test]
fn criterion_01_maximum_principles() {
    let (spec, ops) = Setup::default().build();
    let start = Instant::now();
    let r = check_max_principles(&spec, &ops, 1000, 2024, &SchemeOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        r.passed && r.positivity_violations == 0 && r.sup_violations == 0 && secs < 60.0,
        format!(
            "{} runs, worst min {:.3e}, worst sup margin {:.3e}, {:.2}s",
            r.runs, r.worst_min, r.worst_sup_margin, secs
        ),
    );
}

#[test]
fn criterion_02_uniform_mode_exactness() {
    let lambda = 0.75;
    let c0 = 1.5;
    let setup = Setup { region: ControlRegion::whole_domain(), y0: |_| 1.5, ..Default::default() };
    let (spec, ops) = setup.build();
    let v = spec.constant_control(&ops, lambda);
    let y = solve_state(&spec, &ops, &v, &SchemeOptions::default()).unwrap();
    let dt = spec.time.dt();
    let mut worst = 0.0_f64;
    for (n, level) in y.values.iter().enumerate() {
        let exact = (1.0 - lambda * dt).powi(-(n as i32)) * c0;
        for &val in level {
            worst = worst.max(((val - exact) / exact).abs());
        }
    }

    let one = |_: f64| c0;
    let exact = move |t: f64, _: f64| c0 * (lambda * t).exp();
    let study = convergence_study(
        &StudyProblem {
            coefficient: DiffusionCoefficient::Budyko,
            region: ControlRegion::whole_domain(),
            grading: Grading::Uniform,
            horizon: 1.0,
            lower: -1.0,
            upper: 1.0,
            control: &move |_, _| lambda,
            initial: &one,
            exact: Some(&exact),
            base_cells: 8,
            base_steps: 16,
            quad_order: 3,
        },
        6,
        &SchemeOptions::default(),
    )
    .unwrap();
    let orders: Vec<f64> = study.levels.iter().filter_map(|l| l.order).collect();
    let ok_orders = orders.iter().all(|o| (o - 1.0).abs() <= 0.1);
    report(
        2,
        worst <= 1e-12 && study.passed && ok_orders,
        format!("max relative deviation {worst:.2e}, observed orders {orders:.3?}"),
    );
}

#[test]
fn criterion_03_mass_conservation() {
    let (mut spec, ops) = Setup::default().build();
    let opts = SchemeOptions::default();
    let zero = spec.zero_control(&ops);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        spec.y0 = (0..ops.n_nodes()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let y = solve_state(&spec, &ops, &zero, &opts).unwrap();
        let m0 = total_mass(&y.values[0], &ops);
        for level in &y.values {
            worst = worst.max(((total_mass(level, &ops) - m0) / m0).abs());
        }
    }
    report(3, worst <= 1e-12, format!("100 random data, max relative drift {worst:.2e}"));
}

#[test]
fn criterion_04_gradient_oracle() {
    let setup = Setup { n_cells: 32, n_steps: 64, alpha: 0.5, ..Default::default() };
    let (spec, ops) = setup.build();
    let opts = SchemeOptions::default();
    let mut worst_min = 0.0_f64;
    let mut slopes = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_dual = 0.0_f64;
    let mut all = true;
    for k in 0..20 {
        let u = random_control(&spec, &ops, 100 + k).map(|v| 0.5 * v);
        let w = random_control(&spec, &ops, 200 + k).map(|v| 0.5 * v);
        let r = gradient_check(&spec, &ops, &u, &w, &eps_grid(), &opts).unwrap();
        all &= r.passed;
        worst_min = worst_min.max(r.min_relative_error);
        let s = r.slope.unwrap_or(f64::NAN);
        slopes = (slopes.0.min(s), slopes.1.max(s));
        worst_dual = worst_dual.max(r.dual_path_error);
    }
    let ok = all && worst_min < 1e-6 && slopes.0 >= 1.8 && slopes.1 <= 2.2 && worst_dual <= 1e-10;
    report(
        4,
        ok,
        format!(
            "20 pairs, worst min FD error {worst_min:.2e}, slopes in [{:.3}, {:.3}], dual-path {worst_dual:.2e}",
            slopes.0, slopes.1
        ),
    );
}

#[test]
fn criterion_05_hessian_oracle() {
    let setup = Setup { n_cells: 32, n_steps: 64, alpha: 0.5, ..Default::default() };
    let (spec, ops) = setup.build();
    let opts = SchemeOptions::default();
    let u = random_control(&spec, &ops, 7).map(|v| 0.5 * v);
    let dirs: Vec<ControlField> = (0..10).map(|k| random_control(&spec, &ops, 300 + k).map(|v| 0.5 * v)).collect();
    let r = hessian_check(&spec, &ops, &u, &dirs, &[1e-2, 3e-3, 1e-3, 3e-4, 1e-4], &opts).unwrap();
    let worst_fd = r.second_differences.iter().map(|s| s.min_relative_error).fold(0.0, f64::max);

    // q ≡ 0: the form is the terminal term plus α‖w‖².
    let y = solve_state(&spec, &ops, &u, &opts).unwrap();
    let zero_q = Trajectory { values: vec![vec![0.0; ops.n_nodes()]; y.n_levels()], role: y.role };
    let mut zero_ok = true;
    for w in &dirs {
        let form = hessian_form(&spec, &ops, &u, &y, &zero_q, w, w, &opts).unwrap();
        zero_ok &= form >= spec.alpha * inner_omega_t(w, w, &ops, &spec.time).unwrap();
    }
    report(
        5,
        r.passed && r.max_asymmetry == 0.0 && worst_fd <= 1e-4 && zero_ok && r.zero_adjoint_violations == 0,
        format!(
            "{} pairs, asymmetry {:e}, worst second-difference error {worst_fd:.2e}, oscillation deficit {:.2e}",
            r.pairs, r.max_asymmetry, r.oscillation_deficit
        ),
    );
}

fn ssc_setup(alpha: f64) -> Setup {
    Setup { horizon: 0.1, alpha, yd: |x| 1.0 - x * x, ..Default::default() }
}

fn tight_options() -> OptimizerOptions {
    OptimizerOptions { stationarity_tol: 1e-10, max_iters: 2000, ..Default::default() }
}

#[test]
fn criterion_06_ssc_threshold_and_coercivity() {
    let (spec, ops) = ssc_setup(20.0).build();
    let ssc = ssc_threshold(&spec);
    let expected = 8.0 * 0.6_f64.exp();
    let arithmetic = (ssc.threshold - expected).abs() <= 1e-12 * expected && (ssc.threshold - 14.5775).abs() < 1e-3;

    let opts = SchemeOptions::default();
    let res = optimize(&spec, &ops, &random_control(&spec, &ops, 42), &tight_options(), &opts).unwrap();
    let cert = certify(
        &spec,
        &ops,
        &res,
        &CertifyOptions { hessian_samples: 50, growth_samples: 0, ..Default::default() },
        &opts,
    )
    .unwrap();
    report(
        6,
        arithmetic && res.converged && ssc.satisfied && cert.coercivity.samples == 50 && cert.coercivity.all_above_margin,
        format!(
            "threshold {:.6}, alpha 20, min Rayleigh quotient {:.4} vs margin {:.4}",
            ssc.threshold, cert.coercivity.min_rayleigh, cert.coercivity.margin
        ),
    );
}

fn planted() -> (ProblemSpec, AssembledOperators) {
    let (mut spec, ops) = ssc_setup(20.0).build();
    let planted =
        ControlField::from_fn(&ops, &spec.time, spec.lower, spec.upper, |t, x| 0.8 * (3.0 * x).sin() * (1.0 - 5.0 * t));
    spec.yd = solve_state(&spec, &ops, &planted, &SchemeOptions::default()).unwrap().last().to_vec();
    (spec, ops)
}

#[test]
fn criterion_07_stationarity_certification() {
    let (spec, ops) = planted();
    let opts = SchemeOptions::default();
    let start = Instant::now();
    let res = optimize(&spec, &ops, &random_control(&spec, &ops, 42), &tight_options(), &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cert = certify(
        &spec,
        &ops,
        &res,
        &CertifyOptions { hessian_samples: 0, growth_samples: 0, trichotomy_tol: 1e-8, ..Default::default() },
        &opts,
    )
    .unwrap();
    let monotone = res.history.windows(2).all(|w| w[1].cost <= w[0].cost)
        && res.history.iter().skip(1).all(|r| r.increment < 0.0);
    report(
        7,
        res.converged && cert.stationarity_residual < 1e-8 && cert.trichotomy.passed() && monotone && secs < 120.0,
        format!(
            "{} iterations, residual {:.2e}, trichotomy violations {}, {:.2}s",
            res.iterations, cert.stationarity_residual, cert.trichotomy.violations, secs
        ),
    );
}

#[test]
fn criterion_08_quadratic_growth() {
    let (spec, ops) = planted();
    let opts = SchemeOptions::default();
    let res = optimize(&spec, &ops, &random_control(&spec, &ops, 42), &tight_options(), &opts).unwrap();
    let cert = certify(
        &spec,
        &ops,
        &res,
        &CertifyOptions { hessian_samples: 0, growth_samples: 200, ..Default::default() },
        &opts,
    )
    .unwrap();

    // Direct evaluations on the same samples as a second look at J(v) ≥ J(u*).
    let base = reduced_cost(&spec, &ops, &res.control, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut direct_ok = true;
    for _ in 0..20 {
        let d = random_direction(&res.control, &mut rng);
        let nd = norm_l2_omega_t(&d, &ops, &spec.time).unwrap();
        let v = res.control.add_scaled(1e-2 / nd, &d);
        direct_ok &= reduced_cost(&spec, &ops, &v, &opts).unwrap() >= base;
    }
    report(
        8,
        res.ssc.satisfied && cert.growth.samples == 200 && cert.growth.all_nonnegative && cert.growth.gamma_hat > 0.0 && direct_ok,
        format!(
            "threshold {:.4}, 200 samples, min increase {:.3e}, gamma_hat {:.4}",
            res.ssc.threshold, cert.growth.min_increase, cert.growth.gamma_hat
        ),
    );
}

#[test]
fn criterion_09_lipschitz_probes() {
    let setup = Setup { n_cells: 32, n_steps: 64, horizon: 0.5, ..Default::default() };
    let (spec, ops) = setup.build();
    let r = lipschitz_probe(&spec, &ops, 100, 9, &SchemeOptions::default()).unwrap();
    report(
        9,
        r.passed && r.skipped == 0 && r.max_state_ratio <= r.state_bound && r.max_adjoint_ratio.is_finite(),
        format!(
            "100 pairs, max state ratio {:.4} <= {:.4}, max adjoint ratio {:.4} (reference {:.2})",
            r.max_state_ratio, r.state_bound, r.max_adjoint_ratio, r.adjoint_reference
        ),
    );
}


#[test]
fn criterion_10_cli_determinism_and_exit_codes() {
    let runs: [(&[&str], &str); 4] = [
        (&["solve"], "minimal.json"),
        (&["optimize", "--dump-trajectories", "--seed", "7"], "planted.json"),
        (&["verify", "--suite", "all"], "verify.json"),
        (&["sweep", "--sweep", "alpha=5,15,30"], "planted.json"),
    ];
    let mut identical = 0;
    for (args, config) in runs {
        let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
        let ok = common::degctl(args, config, a.path()) == 0 && common::degctl(args, config, b.path()) == 0;
        let (fa, fb) = (common::artifacts(a.path()), common::artifacts(b.path()));
        if ok && !fa.is_empty() && fa == fb {
            identical += 1;
        }
    }
    let cases: [(&[&str], &str, i32); 5] = [
        (&["solve"], "minimal.json", 0),
        (&["solve"], "guard.json", 2),
        (&["solve"], "overflow.json", 3),
        (&["optimize"], "budget.json", 4),
        (&["verify", "--suite", "max_principle"], "corrupted.json", 5),
    ];
    let mut codes = Vec::new();
    for (args, config, _) in cases {
        let dir = tempdir().unwrap();
        codes.push(common::degctl(args, config, dir.path()));
    }
    let expected: Vec<i32> = cases.iter().map(|c| c.2).collect();
    report(
        10,
        identical == runs.len() && codes == expected,
        format!("{identical}/{} commands byte-identical on rerun, exit codes {codes:?}", runs.len()),
    );
}
