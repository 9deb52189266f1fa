//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 4 5` runs a subset. The process exits
//! non-zero on failure only when `ACCEPTANCE_STRICT` is set.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use vbfilter::cli::ExperimentConfig;
use vbfilter::filters::{
    fixed_gain_analysis, kalman_analysis, kalman_filter, steady_state_kalman, EnkfOptions, GainParams, GaussianState,
    InflLocParams, ProcessNoiseMode,
};
use vbfilter::linalg::{frobenius, max_abs};
use vbfilter::metrics::{evaluate_on, kl_to_reference, out_of_sample_eval, reference_trace};
use vbfilter::models::{rk4_step, Dynamics, KsDynamics, L96Field, L96Form, LinearDynamics, ObservationModel};
use vbfilter::objective::{kl_gaussian, offline_objective, run_filter, FilterFamily, FilterParams, ObjectiveConfig};
use vbfilter::optimize::{
    grad_central_fd, grad_forward_sensitivity, grid_sweep, gradient_descent, objective_and_gradient, online_learn,
    Diagnostics, GradMode, OptimizerConfig, SweepResult,
};
use vbfilter::ssm::{simulate_truth, StateSpaceModel, TruthRun};
use vbfilter::{Matrix, Vector};

// Tolerances and bounds.
const GAIN_RATIO_MAX: f64 = 0.25;
const KL_RATIO_MAX: f64 = 0.25;
const DESK_SECONDS_MAX: f64 = 60.0;
const TELESCOPE_TOL: f64 = 1e-8;
const RMSE_IN: (f64, f64) = (0.43, 0.65);
const RMSE_OUT: (f64, f64) = (0.45, 0.70);
const RMSE_SLACK: f64 = 0.02;
const ENKF_MEAN_REL_MAX: f64 = 0.05;
const GRAD_REL_MAX: f64 = 1e-4;
const IDENTITY_TOL: f64 = 1e-10;
const RICCATI_LIMIT_TOL: f64 = 1e-6;
const ORDER_MIN: f64 = 3.7;
const MODE_GROWTH_TOL: f64 = 0.05;

type Outcome = (bool, String);
type Criterion = (usize, &'static str, fn() -> Outcome);

fn config(json: &str, full_scale: bool) -> ExperimentConfig {
    ExperimentConfig::from_json_str(json, full_scale).expect("acceptance config")
}

fn setup(cfg: &ExperimentConfig) -> (StateSpaceModel, TruthRun) {
    let model = cfg.build_model().expect("model");
    let truth = simulate_truth(&model, cfg.horizon, cfg.seed).expect("truth");
    (model, truth)
}

fn linear_of(model: &StateSpaceModel) -> &LinearDynamics {
    match &model.dynamics {
        Dynamics::Linear(l) => l,
        _ => panic!("linear model expected"),
    }
}

fn gain(model: &StateSpaceModel, k: Matrix) -> FilterParams {
    assert_eq!(k.shape(), (model.dim(), model.obs_dim()));
    FilterParams::Gain(GainParams { k })
}

fn mean_kl(cfg: &ExperimentConfig, model: &StateSpaceModel, truth: &TruthRun, theta: &FilterParams) -> f64 {
    let run = run_filter(theta, &cfg.filter, model, truth, &cfg.objective_config()).expect("filter run");
    let reference = reference_trace(model, truth).unwrap().expect("linear reference");
    kl_to_reference(&run.analysis_states, &reference).unwrap().1
}

struct Recovery {
    gain_ratio: f64,
    kl_ratio: f64,
    decreasing: bool,
    seconds: f64,
    failure: Option<String>,
}

/// Offline descent on the linear gain problem; gain error against `K_steady`
/// relative to its value at `K₀`, and KL to the exact filter relative to `K = 0`.
fn linear_recovery(json: &str, full_scale: bool) -> Recovery {
    let start = Instant::now();
    let cfg = config(json, full_scale);
    let (model, truth) = setup(&cfg);
    let ss = steady_state_kalman(linear_of(&model), &model.obs, 1e-12, 100_000).unwrap();
    let oc = cfg.objective_config();
    let zero = gain(&model, Matrix::zeros(model.dim(), model.obs_dim()));
    let theta0 = match cfg.init {
        vbfilter::cli::ThetaInit::ScaledIdentity { scale } => gain(&model, model.obs.h().transpose() * scale),
        _ => zero.clone(),
    };
    let (d, p) = (model.dim(), model.obs_dim());
    let err = |v: &[f64]| frobenius(&(Matrix::from_column_slice(d, p, v) - &ss.k));
    let objective = |v: &[f64]| {
        objective_and_gradient(GradMode::Adjoint, &cfg.filter, &theta0.with_vec(v), &model, &truth, &oc, cfg.optimizer.fd_step)
    };
    let out = gradient_descent(objective, &theta0.to_vec(), &cfg.optimizer, |v| Diagnostics {
        gain_error: Some(err(v)),
        ..Default::default()
    });
    let errors: Vec<f64> = out.trace.records.iter().filter_map(|r| r.diagnostics.gain_error).collect();
    let checkpoints: Vec<f64> = errors.iter().step_by(10).copied().chain(errors.last().copied()).collect();
    let decreasing = checkpoints.windows(2).all(|w| w[1] <= w[0]);
    let theta = theta0.with_vec(&out.theta);
    let kl_ratio = mean_kl(&cfg, &model, &truth, &theta) / mean_kl(&cfg, &model, &truth, &zero);
    Recovery {
        gain_ratio: err(&out.theta) / err(&theta0.to_vec()),
        kl_ratio,
        decreasing,
        seconds: start.elapsed().as_secs_f64(),
        failure: out.error.map(|e| e.to_string()),
    }
}

fn recovery_ok(r: &Recovery) -> bool {
    r.failure.is_none() && r.decreasing && r.gain_ratio <= GAIN_RATIO_MAX && r.kl_ratio <= KL_RATIO_MAX
}

fn describe(r: &Recovery) -> String {
    let status = r.failure.as_deref().map_or(String::new(), |f| format!(", stopped: {f}"));
    format!(
        "gain ratio {:.3}, KL ratio {:.3}, decreasing {}, {:.1}s{}",
        r.gain_ratio, r.kl_ratio, r.decreasing, r.seconds, status
    )
}

fn criterion_1() -> Outcome {
    let init = r#""init":{"kind":"scaled-identity","scale":0.5}"#;
    let desk = linear_recovery(&format!(r#"{{"model":{{"kind":"linear"}},{init}}}"#), false);
    let full_scale = linear_recovery(&format!(r#"{{"model":{{"kind":"linear"}},{init}}}"#), true);
    let ok = recovery_ok(&desk) && desk.seconds < DESK_SECONDS_MAX && recovery_ok(&full_scale);
    (ok, format!("d=40 J=1000: {}; d=10 J=200: {}", describe(&full_scale), describe(&desk)))
}

fn criterion_2() -> Outcome {
    let r = linear_recovery(r#"{"model":{"kind":"linear"},"observation":{"pattern":"every-other"},"horizon":1000}"#, false);
    let ok = r.failure.is_none() && r.gain_ratio <= GAIN_RATIO_MAX;
    (ok, format!("d=10 H every other row, J=1000, 500 iterations: {}", describe(&r)))
}

fn criterion_3() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, json) in [
        ("linear", r#"{"model":{"kind":"linear"},"init":{"kind":"scaled-identity","scale":0.4}}"#),
        ("l96", r#"{"model":{"kind":"l96","dim":10},"horizon":100}"#),
    ] {
        let cfg = config(json, false);
        let (model, truth) = setup(&cfg);
        let oc = cfg.objective_config();
        let probe = ExperimentConfig { ..cfg.clone() };
        let theta = match probe.init {
            vbfilter::cli::ThetaInit::ScaledIdentity { scale } => gain(&model, model.obs.h().transpose() * scale),
            _ => unreachable!(),
        };
        let opt = OptimizerConfig { iterations: 0, ..cfg.optimizer.clone() };
        let online = online_learn(&cfg.filter, &theta, &model, &truth, &opt, &oc, |_, _| Diagnostics::default()).unwrap();
        let summed: f64 = online.step_costs.iter().map(|c| c.kl + c.nll).sum();
        let offline = offline_objective(&theta, &cfg.filter, &model, &truth, &oc).unwrap().total;
        let diff = (summed - offline).abs();
        ok &= diff <= TELESCOPE_TOL;
        details.push(format!("{name}: |online sum - offline| = {diff:.2e}"));
    }
    (ok, details.join("; "))
}

fn banded_contrast(k: &Matrix) -> (f64, f64) {
    let d = k.nrows();
    let (mut near, mut nn, mut far, mut nf) = (0.0, 0, 0.0, 0);
    for i in 0..d {
        for j in 0..d {
            let dist = (i as isize - j as isize).unsigned_abs();
            let dist = dist.min(d - dist);
            if dist <= 2 {
                near += k[(i, j)].abs();
                nn += 1;
            } else if dist >= 10 {
                far += k[(i, j)].abs();
                nf += 1;
            }
        }
    }
    (near / nn as f64, far / nf as f64)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let cfg = config(r#"{"model":{"kind":"l96"}}"#, true);
    let (model, truth) = setup(&cfg);
    let oc = cfg.objective_config();
    let theta0 = gain(&model, Matrix::identity(model.dim(), model.dim()) * 0.5);
    let objective = |v: &[f64]| {
        objective_and_gradient(GradMode::Adjoint, &cfg.filter, &theta0.with_vec(v), &model, &truth, &oc, cfg.optimizer.fd_step)
    };
    let out = gradient_descent(objective, &theta0.to_vec(), &cfg.optimizer, |_| Diagnostics::default());
    if let Some(e) = out.error {
        return (false, format!("descent stopped: {e}"));
    }
    let theta = theta0.with_vec(&out.theta);
    let inside = evaluate_on(&theta, &cfg.filter, &model, &truth, &oc, None, true, 0).unwrap();
    let fresh = out_of_sample_eval(&theta, &cfg.filter, &model, cfg.eval.fresh_seed, cfg.horizon, cfg.seed, &oc, None, 0).unwrap();
    let (a, b) = (inside.rmse, fresh.rmse);
    let FilterParams::Gain(g) = &theta else { unreachable!() };
    let (near, far) = banded_contrast(&g.k);
    let ok = (RMSE_IN.0..=RMSE_IN.1).contains(&a)
        && (RMSE_OUT.0..=RMSE_OUT.1).contains(&b)
        && b >= a - RMSE_SLACK
        && a < 1.0
        && b < 1.0
        && !inside.diverged
        && !fresh.diverged;
    (
        ok,
        format!(
            "in-sample RMSE {a:.3}, out-of-sample {b:.3}; gain band |K| {near:.3} (distance <= 2) vs {far:.4} (>= 10); {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn sweep(model: &StateSpaceModel, truth: &TruthRun, cfg: &ObjectiveConfig, members: usize, lambdas: &[f64], ells: &[f64]) -> SweepResult {
    let family = FilterFamily::Enkf { members, options: EnkfOptions::default() };
    grid_sweep(&family, lambdas, ells, model, truth, cfg).expect("sweep")
}

fn argmin_of(s: &SweepResult) -> Option<(f64, f64)> {
    s.argmin.map(|(i, k)| (s.lambdas[i], s.ells[k]))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let lambdas: Vec<f64> = (0..=14).map(|i| 0.9 + 0.05 * i as f64).collect();
    let ells = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 20.0, 25.0, 30.0, 40.0];
    let cfg = config(r#"{"model":{"kind":"l96"}}"#, true);
    let (model, truth) = setup(&cfg);
    let oc = cfg.objective_config();
    let s5 = sweep(&model, &truth, &oc, 5, &lambdas, &ells);
    let s20 = sweep(&model, &truth, &oc, 20, &lambdas, &ells);
    let (Some((l5, e5)), Some((l20, e20))) = (argmin_of(&s5), argmin_of(&s20)) else {
        return (false, "an L96 sweep has no finite cell".into());
    };
    let l96_ok = e5 < 5.0
        && (1.05..=1.25).contains(&l5)
        && e20 > e5
        && l20 > l5
        && s20.min < s5.min
        && l5 > 1.0
        && l20 > 1.0;

    let ks_lambdas: Vec<f64> = (0..=7).map(|i| 0.9 + 0.1 * i as f64).collect();
    let ks_ells = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let ks_cfg = config(r#"{"model":{"kind":"ks"},"horizon":200}"#, false);
    let (ks_model, ks_truth) = setup(&ks_cfg);
    let ks_oc = ks_cfg.objective_config();
    let mut ks_ok = true;
    let mut ks_details = Vec::new();
    for n in [5, 20] {
        let s = sweep(&ks_model, &ks_truth, &ks_oc, n, &ks_lambdas, &ks_ells);
        let finite = s.failed_cells == 0;
        let arg = argmin_of(&s);
        ks_ok &= finite && arg.is_some_and(|(l, _)| l > 1.0);
        ks_details.push(format!("N={n} argmin {:?} failed cells {}", arg, s.failed_cells));
    }
    (
        l96_ok && ks_ok,
        format!(
            "L96 N=5 argmin (λ={l5:.2}, ℓ={e5}) min {:.1}; N=20 argmin (λ={l20:.2}, ℓ={e20}) min {:.1}; KS D={} J=200: {}; {:.0}s",
            s5.min,
            s20.min,
            ks_model.dim(),
            ks_details.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn enkf_mean_errors(cfg: &ExperimentConfig, model: &StateSpaceModel, truth: &TruthRun, members: usize) -> Vec<f64> {
    let family = FilterFamily::Enkf {
        members,
        options: EnkfOptions { process_noise: ProcessNoiseMode::Perturb, ..EnkfOptions::default() },
    };
    let theta = FilterParams::InflLoc(InflLocParams::new(1.0, 1e12).unwrap());
    let run = run_filter(&theta, &family, model, truth, &cfg.objective_config()).expect("EnKF run");
    let init = GaussianState::new(model.m0.clone(), model.c0.clone());
    let kf = kalman_filter(&init, linear_of(model), &model.obs, &truth.observations).unwrap();
    run.analysis_means.iter().zip(&kf).map(|(m, (_, a))| (m - &a.mean).norm() / a.mean.norm()).collect()
}

fn criterion_6() -> Outcome {
    let cfg = config(r#"{"model":{"kind":"linear"},"horizon":50}"#, false);
    let (model, truth) = setup(&cfg);
    let big = enkf_mean_errors(&cfg, &model, &truth, 10_000);
    let small = enkf_mean_errors(&cfg, &model, &truth, 100);
    let worst = big.iter().copied().fold(0.0, f64::max);
    let mean_big = big.iter().sum::<f64>() / big.len() as f64;
    let mean_small = small.iter().sum::<f64>() / small.len() as f64;
    let ok = worst <= ENKF_MEAN_REL_MAX && mean_big < mean_small;
    (
        ok,
        format!("N=1e4 worst step relative error {worst:.4}, mean {mean_big:.4}; N=1e2 mean {mean_small:.4}"),
    )
}

/// Largest component error relative to the FD component, floored at 1e-3 of
/// the largest FD component so that near-zero entries do not dominate.
fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1e-3 * scale)).fold(0.0, f64::max)
}

fn grad_gap(cfg: &ExperimentConfig, model: &StateSpaceModel, truth: &TruthRun, theta: &FilterParams) -> f64 {
    let oc = cfg.objective_config();
    let f = |v: &[f64]| offline_objective(&theta.with_vec(v), &cfg.filter, model, truth, &oc).map(|b| b.total);
    let fd = grad_central_fd(f, &theta.to_vec(), cfg.optimizer.fd_step).unwrap();
    let fwd = grad_forward_sensitivity(&cfg.filter, theta, model, truth, &oc).unwrap();
    max_rel(&fwd, &fd)
}

fn criterion_7() -> Outcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
    let mut worst = [0.0f64; 3];

    let lin = config(r#"{"model":{"kind":"linear"},"horizon":50}"#, false);
    let (lm, lt) = setup(&lin);
    let l96 = config(r#"{"model":{"kind":"l96","dim":10},"horizon":20}"#, false);
    let (nm, nt) = setup(&l96);
    let enkf = config(
        r#"{"model":{"kind":"l96","dim":10},"horizon":20,"filter":{"kind":"enkf","members":8},"init":{"kind":"infl-loc","lambda":1.1,"ell":4}}"#,
        false,
    );
    let (em, et) = setup(&enkf);
    for _ in 0..5 {
        let k = Matrix::from_fn(10, 10, |i, j| if i == j { rng.random_range(0.3..0.7) } else { rng.random_range(-0.05..0.05) });
        worst[0] = worst[0].max(grad_gap(&lin, &lm, &lt, &gain(&lm, k.clone())));
        worst[1] = worst[1].max(grad_gap(&l96, &nm, &nt, &gain(&nm, k)));
        let p = InflLocParams::new(rng.random_range(1.0..1.4), rng.random_range(2.0..15.0)).unwrap();
        worst[2] = worst[2].max(grad_gap(&enkf, &em, &et, &FilterParams::InflLoc(p)));
    }
    let ok = worst.iter().all(|w| *w <= GRAD_REL_MAX);
    (
        ok,
        format!(
            "max relative error over 5 θ: linear {:.2e}, L96 extended {:.2e}, EnKF (λ,ℓ) {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, value: f64, tol: f64| {
        ok &= value.abs() <= tol;
        notes.push(format!("{name} {value:.1e}"));
    };

    let g = GaussianState::new(
        Vector::from_vec(vec![0.3, -1.0, 2.0]),
        Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]),
    );
    check("KL(g,g)", kl_gaussian(&g, &g).unwrap(), IDENTITY_TOL);
    let scalar = |m: f64, v: f64| GaussianState::new(Vector::from_element(1, m), Matrix::from_element(1, 1, v));
    check("KL(N(0,1)|N(1,1)) - 1/2", kl_gaussian(&scalar(0.0, 1.0), &scalar(1.0, 1.0)).unwrap() - 0.5, IDENTITY_TOL);
    let hand = 0.5 * (2.0 / 3.0 + 4.0 / 3.0 - 1.0 + (3.0f64 / 2.0).ln());
    check("KL(N(1,2)|N(-1,3)) - hand", kl_gaussian(&scalar(1.0, 2.0), &scalar(-1.0, 3.0)).unwrap() - hand, IDENTITY_TOL);

    let obs = ObservationModel::every_other(3, 0.7).unwrap();
    let y = Vector::from_vec(vec![0.5, 1.5]);
    let (exact, k) = kalman_analysis(&g, &y, &obs).unwrap();
    let joseph = fixed_gain_analysis(&g, &GainParams { k }, &y, &obs);
    check("Joseph vs short form", max_abs(&(&joseph.cov - &exact.cov)), IDENTITY_TOL);

    let lin = LinearDynamics::random(10, 0, 0.25).unwrap();
    let full = ObservationModel::identity(10, 1.0).unwrap();
    let ss = steady_state_kalman(&lin, &full, 1e-13, 100_000).unwrap();
    check("Riccati residual", ss.fixed_point_residual(&lin, &full), IDENTITY_TOL);
    let init = GaussianState::new(Vector::zeros(10), Matrix::identity(10, 10));
    let ys = vec![Vector::zeros(10); 1000];
    let run = kalman_filter(&init, &lin, &full, &ys).unwrap();
    let limit = &run.last().unwrap().1.cov;
    check("steady C vs 1000-step recursion", max_abs(&(limit - &ss.c)), RICCATI_LIMIT_TOL);
    (ok, notes.join(", "))
}

fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn criterion_9() -> Outcome {
    // RK4 on Lorenz '96 over t = 1 from a point on the attractor.
    let field = L96Field::new(40, 8.0, L96Form::Standard).unwrap();
    let mut x0 = Vector::from_element(40, 8.0);
    x0[0] += 0.01;
    for _ in 0..400 {
        x0 = rk4_step(&field, &x0, 0.05);
    }
    let integrate = |dt: f64, steps: usize| (0..steps).fold(x0.clone(), |x, _| rk4_step(&field, &x, dt));
    let reference = integrate(0.05 / 128.0, 2560);
    let rk_errors: Vec<f64> = (0..4).map(|h| (integrate(0.05 / 2f64.powi(h), 20 << h) - &reference).norm()).collect();
    let rk_orders = orders(&rk_errors);

    // ETDRK4 on KS over t = 1 from the smooth initial profile, with dt from
    // 1/32 to 1/256 against dt = 1/8192.
    let ks_at = |dt: f64| KsDynamics::new(22.0, 64, dt, 1, Matrix::identity(64, 64)).unwrap();
    let tau = 2.0 * std::f64::consts::PI / 22.0;
    let u0 = ks_at(0.25).grid().map(|x| (tau * x).cos() * (1.0 + (tau * x).sin()));
    let ks_run = |h: i32| ks_at(1.0 / 2f64.powi(h)).advance(&u0, 1 << h).unwrap();
    let ks_ref = ks_run(13);
    let ks_errors: Vec<f64> = (5..9).map(|h| (ks_run(h) - &ks_ref).norm()).collect();
    let ks_orders = orders(&ks_errors);

    // Linear growth of the first mode at amplitude 1e-6.
    let k = tau;
    let t = 10.0;
    let model = ks_at(0.25);
    let u = model.grid().map(|x| 1e-6 * (k * x).cos());
    let v = model.advance(&u, 40).unwrap();
    let grid = model.grid();
    let project = |w: &Vector| 2.0 / 64.0 * w.iter().zip(grid.iter()).map(|(a, x)| a * (k * x).cos()).sum::<f64>();
    let observed = project(&v) / project(&u);
    let expected = ((k * k - k.powi(4)) * t).exp();
    let growth_err = (observed / expected - 1.0).abs();

    let min_order = rk_orders.iter().chain(&ks_orders).copied().fold(f64::INFINITY, f64::min);
    let ok = min_order >= ORDER_MIN && growth_err <= MODE_GROWTH_TOL;
    let fmt = |o: &[f64]| o.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/");
    (
        ok,
        format!(
            "RK4 orders {}, ETDRK4 orders {}, mode growth {observed:.5} vs {expected:.5} (rel {growth_err:.1e})",
            fmt(&rk_orders),
            fmt(&ks_orders)
        ),
    )
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_vbfilter");
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let configs = [
        ("linear", r#"{"model":{"kind":"linear"},"horizon":60,"optimizer":{"iterations":5}}"#),
        (
            "enkf",
            r#"{"model":{"kind":"l96","dim":10},"horizon":40,"filter":{"kind":"enkf","members":6},"init":{"kind":"infl-loc","lambda":1.1,"ell":3},"sweep":{"lambdas":[1.0,1.1,1.2],"ells":[2,4,8]}}"#,
        ),
    ];
    let mut runs = Vec::new();
    for (name, text) in configs {
        std::fs::write(root.join(format!("{name}.json")), text).unwrap();
    }
    std::fs::write(root.join("theta.json"), r#"{"lambda":1.1,"ell":4}"#).unwrap();
    let jobs: [(&str, &str, &[&str]); 6] = [
        ("simulate", "linear", &[]),
        ("steady-state", "linear", &[]),
        ("learn-gain", "linear", &[]),
        ("sweep", "enkf", &[]),
        ("evaluate", "enkf", &["--theta"]),
        ("simulate", "enkf", &[]),
    ];
    let mut ok = true;
    for (sub, cfg_name, extra) in jobs {
        let mut outputs = Vec::new();
        for (rep, threads) in [(0, "1"), (1, "1"), (2, "3")] {
            let out = root.join(format!("{sub}-{cfg_name}-{rep}"));
            let mut cmd = Command::new(bin);
            cmd.arg(sub)
                .arg("--config")
                .arg(root.join(format!("{cfg_name}.json")))
                .arg("--out")
                .arg(&out)
                .arg("--threads")
                .arg(threads);
            if !extra.is_empty() {
                cmd.arg("--theta").arg(root.join("theta.json"));
            }
            let status = cmd.status().unwrap();
            ok &= status.success();
            outputs.push(read_dir_bytes(&out));
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty();
        ok &= same;
        runs.push(format!("{sub}({cfg_name}) {} files {}", outputs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    (ok, runs.join(", "))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 10] = [
        (1, "steady-state gain recovery, full observations", criterion_1),
        (2, "gain recovery, partial observations", criterion_2),
        (3, "online and offline objectives agree", criterion_3),
        (4, "Lorenz '96 learned-gain RMSE", criterion_4),
        (5, "inflation and localization landscape", criterion_5),
        (6, "large-ensemble EnKF matches the Kalman filter", criterion_6),
        (7, "forward-sensitivity gradients match finite differences", criterion_7),
        (8, "oracle identities", criterion_8),
        (9, "integrator convergence orders", criterion_9),
        (10, "byte-identical CLI outputs across reruns and thread counts", criterion_10),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, title, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let (ok, detail) = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !ok {
            failed += 1;
        }
        println!("criterion {id:>2} {}: {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
