//! Experiment configuration and the batch subcommands.
//!
//! A config file is JSON. Fields it leaves out take desk-scale defaults, or
//! the full experiment sizes under `paper_scale`; the defaults depend on the
//! model kind and the observation pattern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::filters::{steady_state_kalman, EnkfOptions, GainParams, InflLocParams, SteadyState};
use crate::io::{
    config_hash, read_matrix_csv, write_breakdown_csv, write_json, write_matrix_csv, write_sweep_csv, write_trace_csv,
    write_truth_csv,
};
use crate::linalg::frobenius;
use crate::metrics::{evaluate_on, kl_to_reference, out_of_sample_eval, reference_trace, rmse, EvalReport};
use crate::models::{Dynamics, KsDynamics, L96Form, LinearDynamics, Lorenz96Dynamics, ObservationModel};
use crate::objective::{offline_objective, run_filter, FilterFamily, FilterParams, ObjectiveConfig};
use crate::optimize::{
    grid_sweep, gradient_descent, objective_and_gradient, online_learn, Diagnostics, OptimizerConfig,
};
use crate::ssm::{simulate_truth, StateSpaceModel, TruthRun};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Linear {
        dim: usize,
        /// Variance of the entries of `Q` in `Σ = QQᵀ + I/10`.
        noise_scale: f64,
        /// Seed of `A` and `Σ`, independent of the experiment seed.
        model_seed: u64,
        /// Every component of `m₀`.
        m0: f64,
        c0_scale: f64,
    },
    L96 {
        dim: usize,
        forcing: f64,
        dt: f64,
        sigma_scale: f64,
        form: L96Form,
        /// RK4 steps from `F·1 + 0.01 e₁` to the initial mean.
        spinup_steps: usize,
        c0_scale: f64,
    },
    Ks {
        length: f64,
        dim: usize,
        dt: f64,
        steps_per_obs: usize,
        sigma_scale: f64,
        /// ETDRK4 steps from `cos(2πx/L)(1 + sin(2πx/L))` to the initial mean.
        spinup_steps: usize,
        c0_scale: f64,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Linear { .. } => "linear",
            ModelConfig::L96 { .. } => "l96",
            ModelConfig::Ks { .. } => "ks",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Linear { dim, .. } | ModelConfig::L96 { dim, .. } | ModelConfig::Ks { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationPattern {
    Full,
    EveryOther,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub pattern: ObservationPattern,
    pub noise_variance: f64,
}

/// Starting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThetaInit {
    Zero,
    /// `scale · Hᵀ`
    ScaledIdentity { scale: f64 },
    /// `scale · K_steady` (linear dynamics only)
    ScaledSteady { scale: f64 },
    /// Gain matrix from a CSV file.
    File { path: PathBuf },
    InflLoc { lambda: f64, ell: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningMode {
    Offline,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub ells: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub fresh_seed: u64,
    /// Horizon of the evaluation run; the training horizon when absent.
    pub horizon: Option<usize>,
    /// Leading steps excluded from RMSE.
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub horizon: usize,
    pub observation: ObservationConfig,
    pub filter: FilterFamily,
    pub init: ThetaInit,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub learning: LearningMode,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
    pub steady_state: SteadyConfig,
    /// Record KL-to-reference and RMSE at every descent iteration.
    pub diagnostics: bool,
    /// Master seed of the truth run and of the objective's random streams.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

fn default_model(kind: &str, full_scale: bool) -> Result<ModelConfig> {
    Ok(match kind {
        "linear" => ModelConfig::Linear { dim: if full_scale { 40 } else { 10 }, noise_scale: 0.25, model_seed: 0, m0: 1.0, c0_scale: 1.0 },
        "l96" => ModelConfig::L96 {
            dim: 40,
            forcing: 8.0,
            dt: 0.05,
            sigma_scale: 0.1,
            form: L96Form::Standard,
            spinup_steps: 1000,
            c0_scale: 1.0,
        },
        "ks" => ModelConfig::Ks {
            length: 22.0,
            dim: if full_scale { 256 } else { 64 },
            dt: 0.25,
            steps_per_obs: 5,
            sigma_scale: 0.01,
            spinup_steps: 1000,
            c0_scale: 1.0,
        },
        other => return Err(Error::Config(format!("unknown model kind {other:?} (expected linear, l96 or ks)"))),
    })
}

impl ExperimentConfig {
    /// Defaults for a model kind and observation pattern.
    pub fn defaults(kind: &str, pattern: ObservationPattern, full_scale: bool) -> Result<Self> {
        let model = default_model(kind, full_scale)?;
        let partial = pattern == ObservationPattern::EveryOther;
        let (horizon, filter, init, variance) = match kind {
            "linear" => (
                if full_scale { 1000 } else { 200 },
                FilterFamily::FixedGain,
                ThetaInit::ScaledIdentity { scale: 0.5 },
                1.0,
            ),
            "l96" => (if full_scale { 1000 } else { 200 }, FilterFamily::ExtendedGain, ThetaInit::ScaledIdentity { scale: 0.5 }, 1.0),
            _ => (
                if full_scale { 200 } else { 50 },
                FilterFamily::Enkf { members: 5, options: EnkfOptions::default() },
                ThetaInit::InflLoc { lambda: 1.1, ell: 5.0 },
                0.5,
            ),
        };
        let lambdas: Vec<f64> = (0..=12).map(|i| 1.0 + 0.05 * i as f64).collect();
        let ells = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 20.0, 25.0, 30.0, 40.0];
        Ok(Self {
            model,
            horizon,
            observation: ObservationConfig { pattern, noise_variance: variance },
            filter,
            init,
            objective: ObjectiveConfig::default(),
            optimizer: OptimizerConfig { iterations: if partial { 500 } else { 100 }, ..OptimizerConfig::default() },
            learning: LearningMode::Offline,
            sweep: SweepConfig { lambdas, ells },
            eval: EvalConfig { fresh_seed: 1, horizon: None, burn_in: 0 },
            steady_state: SteadyConfig { tol: 1e-12, max_iter: 100_000 },
            diagnostics: true,
            seed: 0,
            output_dir: None,
        })
    }

    /// Parse a JSON config, filling absent fields from [`ExperimentConfig::defaults`].
    pub fn from_json_str(text: &str, paper_scale: bool) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let kind = user.pointer("/model/kind").and_then(Value::as_str).unwrap_or("linear").to_string();
        let pattern = match user.pointer("/observation/pattern") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("observation.pattern: {e}")))?,
            None => ObservationPattern::Full,
        };
        let mut merged = serde_json::to_value(Self::defaults(&kind, pattern, paper_scale)?)?;
        merge(&mut merged, user);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, paper_scale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, paper_scale)
    }

    /// The objective settings with the experiment seed applied.
    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig { seed: self.seed, ..self.objective.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.observation.noise_variance > 0.0) {
            return Err(Error::Config("observation noise variance must be positive".into()));
        }
        match &self.model {
            ModelConfig::Linear { dim, noise_scale, c0_scale, .. } => {
                if *dim == 0 || *noise_scale < 0.0 || *c0_scale < 0.0 {
                    return Err(Error::Config("linear model needs dim ≥ 1 and non-negative scales".into()));
                }
            }
            ModelConfig::L96 { dim, dt, sigma_scale, c0_scale, .. } => {
                if *dim < 4 {
                    return Err(Error::Config(format!("Lorenz '96 needs dim ≥ 4, got {dim}")));
                }
                if !(*dt > 0.0) || !(*sigma_scale > 0.0) || *c0_scale < 0.0 {
                    return Err(Error::Config("Lorenz '96 needs dt > 0, sigma_scale > 0, c0_scale ≥ 0".into()));
                }
            }
            ModelConfig::Ks { length, dim, dt, steps_per_obs, sigma_scale, c0_scale, .. } => {
                if *dim == 0 || dim % 2 != 0 {
                    return Err(Error::Config(format!("KS grid size must be even and positive, got {dim}")));
                }
                if !(*length > 0.0) || !(*dt > 0.0) || *steps_per_obs == 0 || !(*sigma_scale > 0.0) || *c0_scale < 0.0 {
                    return Err(Error::Config("KS needs L > 0, dt > 0, steps_per_obs ≥ 1, sigma_scale > 0".into()));
                }
            }
        }
        self.objective.validate()?;
        self.optimizer.validate()?;
        match (&self.filter, &self.init) {
            (FilterFamily::Enkf { members, .. }, ThetaInit::InflLoc { lambda, ell }) => {
                if *members < 2 {
                    return Err(Error::Config(format!("EnKF needs at least 2 members, got {members}")));
                }
                InflLocParams::new(*lambda, *ell)?;
            }
            (FilterFamily::Enkf { .. }, _) => {
                return Err(Error::Config("EnKF parameters must be initialized with kind infl-loc".into()));
            }
            (_, ThetaInit::InflLoc { .. }) => {
                return Err(Error::Config("(λ, ℓ) parameters need the enkf filter family".into()));
            }
            (family, init) => {
                let linear = matches!(self.model, ModelConfig::Linear { .. });
                if matches!(family, FilterFamily::FixedGain) && !linear {
                    return Err(Error::Config("fixed-gain filters need the linear model; use extended-gain".into()));
                }
                if matches!(self.model, ModelConfig::Ks { .. }) {
                    return Err(Error::Config("gain filters need a Jacobian, which the KS model does not provide".into()));
                }
                if matches!(init, ThetaInit::ScaledSteady { .. }) && !linear {
                    return Err(Error::Config("scaled-steady initialization needs the linear model".into()));
                }
                if self.objective.kl_mode == Some(crate::objective::KlMode::ProjectedEnsemble) {
                    return Err(Error::Config("projected-ensemble KL needs the enkf family".into()));
                }
            }
        }
        if let FilterFamily::Enkf { options, .. } = &self.filter {
            if !(options.distance_unit > 0.0) {
                return Err(Error::Config("localization distance unit must be positive".into()));
            }
            if self.objective.nll_mode == crate::objective::NllMode::Analytic {
                return Err(Error::Config("analytic likelihood is not defined for ensembles".into()));
            }
            if self.objective.kl_mode == Some(crate::objective::KlMode::GaussianAnalytic) {
                return Err(Error::Config("gaussian-analytic KL needs a Gaussian filter family".into()));
            }
        }
        if matches!(self.learning, LearningMode::Online) && !self.filter.is_gain() {
            return Err(Error::Config("online learning is implemented for gain families".into()));
        }
        if self.sweep.ells.iter().any(|l| !(*l > 0.0)) || self.sweep.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("sweep grids need λ ≥ 0 and ℓ > 0".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<StateSpaceModel> {
        let d = self.model.dim();
        let var = self.observation.noise_variance;
        let obs = match self.observation.pattern {
            ObservationPattern::Full => ObservationModel::identity(d, var)?,
            ObservationPattern::EveryOther => ObservationModel::every_other(d, var)?,
        };
        match &self.model {
            ModelConfig::Linear { dim, noise_scale, model_seed, m0, c0_scale } => {
                let dynamics = Dynamics::Linear(LinearDynamics::random(*dim, *model_seed, *noise_scale)?);
                StateSpaceModel::new(dynamics, obs, Vector::from_element(d, *m0), Matrix::identity(d, d) * *c0_scale)
            }
            ModelConfig::L96 { dim, forcing, dt, sigma_scale, form, spinup_steps, c0_scale } => {
                let dynamics = Lorenz96Dynamics::new(*dim, *forcing, *dt, Matrix::identity(d, d) * *sigma_scale, *form)?;
                let mut m0 = Vector::from_element(d, *forcing);
                m0[0] += 0.01;
                for _ in 0..*spinup_steps {
                    m0 = dynamics.propagate(&m0);
                }
                if m0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Blowup { step: 0, context: "Lorenz '96 spin-up became non-finite".into() });
                }
                StateSpaceModel::new(Dynamics::Lorenz96(dynamics), obs, m0, Matrix::identity(d, d) * *c0_scale)
            }
            ModelConfig::Ks { length, dim, dt, steps_per_obs, sigma_scale, spinup_steps, c0_scale } => {
                let dynamics = KsDynamics::new(*length, *dim, *dt, *steps_per_obs, Matrix::identity(d, d) * *sigma_scale)?;
                let x = dynamics.grid();
                let tau = 2.0 * std::f64::consts::PI / length;
                let u0 = x.map(|xi| (tau * xi).cos() * (1.0 + (tau * xi).sin()));
                let m0 = dynamics.advance(&u0, *spinup_steps)?;
                StateSpaceModel::new(Dynamics::Ks(dynamics), obs, m0, Matrix::identity(d, d) * *c0_scale)
            }
        }
    }
}

/// Overlay `user` onto `base`. Objects merge key by key, except that a tagged
/// object whose `kind` changes is replaced whole.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            let kind_changed = matches!((b.get("kind"), u.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changed {
                *b = u;
                return;
            }
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Everything a subcommand needs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: StateSpaceModel,
    pub out: PathBuf,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let model = config.build_model()?;
        std::fs::create_dir_all(&out)?;
        Ok(Self { config, model, out })
    }

    fn truth(&self) -> Result<TruthRun> {
        simulate_truth(&self.model, self.config.horizon, self.config.seed)
    }

    fn linear(&self) -> Option<&LinearDynamics> {
        match &self.model.dynamics {
            Dynamics::Linear(l) => Some(l),
            _ => None,
        }
    }

    fn steady(&self) -> Result<Option<SteadyState>> {
        match self.linear() {
            Some(lin) => Ok(Some(steady_state_kalman(lin, &self.model.obs, self.config.steady_state.tol, self.config.steady_state.max_iter)?)),
            None => Ok(None),
        }
    }

    pub fn initial_theta(&self, steady: Option<&SteadyState>) -> Result<FilterParams> {
        let (d, p) = (self.model.dim(), self.model.obs_dim());
        Ok(match &self.config.init {
            ThetaInit::Zero => FilterParams::Gain(GainParams { k: Matrix::zeros(d, p) }),
            ThetaInit::ScaledIdentity { scale } => FilterParams::Gain(GainParams { k: self.model.obs.h().transpose() * *scale }),
            ThetaInit::ScaledSteady { scale } => {
                let ss = steady.ok_or_else(|| Error::Config("scaled-steady initialization needs the linear model".into()))?;
                FilterParams::Gain(GainParams { k: &ss.k * *scale })
            }
            ThetaInit::File { path } => FilterParams::Gain(GainParams { k: read_gain(path, d, p)? }),
            ThetaInit::InflLoc { lambda, ell } => FilterParams::InflLoc(InflLocParams::new(*lambda, *ell)?),
        })
    }
}

fn read_gain(path: &Path, d: usize, p: usize) -> Result<Matrix> {
    let k = read_matrix_csv(path)?;
    if k.shape() != (d, p) {
        return Err(Error::Config(format!("{}: gain is {}x{}, model needs {d}x{p}", path.display(), k.nrows(), k.ncols())));
    }
    Ok(k)
}

/// Parameters from a file: a gain CSV, or JSON `{"lambda": …, "ell": …}`.
pub fn read_theta(path: &Path, family: &FilterFamily, d: usize, p: usize) -> Result<FilterParams> {
    match family {
        FilterFamily::Enkf { .. } => {
            let text = std::fs::read_to_string(path)?;
            let v: InflLocParams = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(FilterParams::InflLoc(InflLocParams::new(v.lambda, v.ell)?))
        }
        _ => Ok(FilterParams::Gain(GainParams { k: read_gain(path, d, p)? })),
    }
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    seed: u64,
    horizon: usize,
    state_dim: usize,
    obs_dim: usize,
    model: &'a str,
    config_hash: String,
}

pub fn cmd_simulate(exp: &Experiment) -> Result<()> {
    let truth = exp.truth()?;
    write_truth_csv(&exp.out.join("truth.csv"), &truth)?;
    write_json(
        &exp.out.join("truth.json"),
        &TruthSidecar {
            seed: truth.seed,
            horizon: truth.horizon(),
            state_dim: exp.model.dim(),
            obs_dim: exp.model.obs_dim(),
            model: exp.config.model.kind(),
            config_hash: config_hash(&exp.config)?,
        },
    )
}

#[derive(Serialize)]
struct LearnSummary {
    mode: LearningMode,
    iterations: usize,
    initial_objective: Option<f64>,
    final_objective: Option<f64>,
    initial_gain_error: Option<f64>,
    final_gain_error: Option<f64>,
    flagged_steps: Vec<usize>,
    status: String,
    config_hash: String,
}

/// Diagnostics at a gain: distance to the steady gain, and (when enabled)
/// mean KL to the exact Kalman filter and RMSE of the filter run.
fn gain_diagnostics(
    exp: &Experiment,
    truth: &TruthRun,
    reference: Option<&[crate::filters::GaussianState]>,
    k_steady: Option<&Matrix>,
    theta: &FilterParams,
) -> Diagnostics {
    let mut out = Diagnostics::default();
    if let (FilterParams::Gain(g), Some(ks)) = (theta, k_steady) {
        out.gain_error = Some(frobenius(&(&g.k - ks)));
    }
    if exp.config.diagnostics {
        if let Ok(run) = run_filter(theta, &exp.config.filter, &exp.model, truth, &exp.config.objective_config()) {
            out.rmse = rmse(&run.analysis_means, &truth.states[1..]).ok();
            if let Some(r) = reference {
                out.kl_to_reference = kl_to_reference(&run.analysis_states, r).ok().map(|(_, m)| m);
            }
        }
    }
    out
}

pub fn cmd_learn_gain(exp: &Experiment) -> Result<()> {
    let cfg = &exp.config;
    if !cfg.filter.is_gain() {
        return Err(Error::Config("learn-gain needs the fixed-gain or extended-gain filter family".into()));
    }
    let steady = exp.steady()?;
    let k_steady = steady.as_ref().map(|s| s.k.clone());
    let theta0 = exp.initial_theta(steady.as_ref())?;
    let truth = exp.truth()?;
    let reference = reference_trace(&exp.model, &truth)?;
    let ocfg = cfg.objective_config();
    let family = cfg.filter;
    let (d, p) = (exp.model.dim(), exp.model.obs_dim());

    let (theta_star, trace, flagged, failure, final_gain) = match cfg.learning {
        LearningMode::Offline => {
            let objective = |v: &[f64]| {
                objective_and_gradient(cfg.optimizer.grad_mode, &family, &theta0.with_vec(v), &exp.model, &truth, &ocfg, cfg.optimizer.fd_step)
            };
            let diag = |v: &[f64]| gain_diagnostics(exp, &truth, reference.as_deref(), k_steady.as_ref(), &theta0.with_vec(v));
            let out = gradient_descent(objective, &theta0.to_vec(), &cfg.optimizer, diag);
            (out.theta, out.trace, Vec::new(), out.error, None)
        }
        LearningMode::Online => {
            let diag = |_: usize, v: &[f64]| {
                let mut dg = Diagnostics::default();
                if let Some(ks) = &k_steady {
                    dg.gain_error = Some(frobenius(&(Matrix::from_column_slice(d, p, v) - ks)));
                }
                dg
            };
            let out = online_learn(&family, &theta0, &exp.model, &truth, &cfg.optimizer, &ocfg, diag)?;
            let last = out.thetas.last().cloned().unwrap_or_else(|| theta0.to_vec());
            (out.theta_bar, out.trace, out.flagged, None, Some(last))
        }
    };
    let theta = theta0.with_vec(&theta_star);
    let FilterParams::Gain(g) = &theta else { unreachable!("gain family") };
    write_matrix_csv(&exp.out.join("gain.csv"), &g.k)?;
    if let Some(last) = &final_gain {
        write_matrix_csv(&exp.out.join("gain_final.csv"), &Matrix::from_column_slice(d, p, last))?;
    }
    if let Some(ks) = &k_steady {
        write_matrix_csv(&exp.out.join("k_steady.csv"), ks)?;
    }
    write_trace_csv(&exp.out.join("trace.csv"), &trace)?;

    let gain_error = |t: &FilterParams| match (t, &k_steady) {
        (FilterParams::Gain(g), Some(ks)) => Some(frobenius(&(&g.k - ks))),
        _ => None,
    };
    let summary = LearnSummary {
        mode: cfg.learning,
        iterations: cfg.optimizer.iterations,
        initial_objective: trace.records.first().map(|r| r.objective),
        final_objective: trace.records.last().map(|r| r.objective),
        initial_gain_error: gain_error(&theta0),
        final_gain_error: gain_error(&theta),
        flagged_steps: flagged,
        status: failure.as_ref().map_or_else(|| "ok".to_string(), |e| e.to_string()),
        config_hash: config_hash(cfg)?,
    };
    write_json(&exp.out.join("summary.json"), &summary)?;
    if let Some(e) = failure {
        return Err(e);
    }
    if let Ok(b) = offline_objective(&theta, &family, &exp.model, &truth, &ocfg) {
        write_breakdown_csv(&exp.out.join("objective.csv"), &b)?;
    }
    let in_sample = evaluate_on(&theta, &family, &exp.model, &truth, &ocfg, k_steady.as_ref(), true, cfg.eval.burn_in)?;
    write_json(&exp.out.join("eval_in_sample.json"), &in_sample)?;
    let oos = eval_fresh(exp, &theta, k_steady.as_ref())?;
    write_json(&exp.out.join("eval_out_of_sample.json"), &oos)?;
    Ok(())
}

fn eval_fresh(exp: &Experiment, theta: &FilterParams, k_steady: Option<&Matrix>) -> Result<EvalReport> {
    let cfg = &exp.config;
    out_of_sample_eval(
        theta,
        &cfg.filter,
        &exp.model,
        cfg.eval.fresh_seed,
        cfg.eval.horizon.unwrap_or(cfg.horizon),
        cfg.seed,
        &cfg.objective_config(),
        k_steady,
        cfg.eval.burn_in,
    )
}

#[derive(Serialize)]
struct SweepSidecar<'a> {
    lambdas: &'a [f64],
    ells: &'a [f64],
    members: usize,
    argmin_lambda: Option<f64>,
    argmin_ell: Option<f64>,
    min: Option<f64>,
    failed_cells: usize,
    config_hash: String,
}

pub fn cmd_sweep(exp: &Experiment) -> Result<()> {
    let cfg = &exp.config;
    let FilterFamily::Enkf { members, .. } = cfg.filter else {
        return Err(Error::Config("sweep needs the enkf filter family".into()));
    };
    let truth = exp.truth()?;
    let s = grid_sweep(&cfg.filter, &cfg.sweep.lambdas, &cfg.sweep.ells, &exp.model, &truth, &cfg.objective_config())?;
    write_sweep_csv(&exp.out.join("sweep.csv"), &s)?;
    if s.failed_cells > 0 {
        eprintln!("warning: {} of {} sweep cells failed and are recorded as inf", s.failed_cells, s.lambdas.len() * s.ells.len());
    }
    write_json(
        &exp.out.join("sweep.json"),
        &SweepSidecar {
            lambdas: &s.lambdas,
            ells: &s.ells,
            members,
            argmin_lambda: s.argmin.map(|(i, _)| s.lambdas[i]),
            argmin_ell: s.argmin.map(|(_, k)| s.ells[k]),
            min: s.argmin.map(|_| s.min),
            failed_cells: s.failed_cells,
            config_hash: config_hash(cfg)?,
        },
    )
}

#[derive(Serialize)]
struct SteadySidecar {
    iterations: usize,
    fixed_point_residual: f64,
    residuals: Vec<f64>,
}

pub fn cmd_steady_state(exp: &Experiment) -> Result<()> {
    let Some(lin) = exp.linear() else {
        return Err(Error::Config("steady-state needs the linear model".into()));
    };
    let ss = match steady_state_kalman(lin, &exp.model.obs, exp.config.steady_state.tol, exp.config.steady_state.max_iter) {
        Ok(ss) => ss,
        Err(e) => {
            eprintln!("steady-state iteration failed: {e}");
            return Err(e);
        }
    };
    write_matrix_csv(&exp.out.join("k_steady.csv"), &ss.k)?;
    write_matrix_csv(&exp.out.join("c_steady.csv"), &ss.c)?;
    write_matrix_csv(&exp.out.join("c_hat_steady.csv"), &ss.c_hat)?;
    write_json(
        &exp.out.join("steady.json"),
        &SteadySidecar { iterations: ss.residuals.len(), fixed_point_residual: ss.fixed_point_residual(lin, &exp.model.obs), residuals: ss.residuals.clone() },
    )
}

pub fn cmd_evaluate(exp: &Experiment, theta_file: &Path) -> Result<()> {
    let theta = read_theta(theta_file, &exp.config.filter, exp.model.dim(), exp.model.obs_dim())?;
    let k_steady = if exp.config.filter.is_gain() { exp.steady()?.map(|s| s.k) } else { None };
    let report = eval_fresh(exp, &theta, k_steady.as_ref())?;
    write_json(&exp.out.join("eval.json"), &report)
}

