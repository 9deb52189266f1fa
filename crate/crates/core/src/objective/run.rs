use serde::{Deserialize, Serialize};

use super::{
    expected_nll, gaussian_projection_with, kl_gaussian, ledoit_wolf_shrink, Belief, KlMode, ObjectiveBreakdown,
    ObjectiveConfig, StepCost,
};
use crate::filters::{
    enkf_analysis, enkf_propagate, fixed_gain_analysis, gain_forecast, EnkfOptions, Ensemble, GainParams,
    GaussianState, InflLocParams,
};
use crate::linalg::{cholesky, chol_log_det, psd_factor};
use crate::models::{Dynamics, ObservationModel};
use crate::rng::{standard_normal_vec, stream_rng, Stream};
use crate::ssm::{at_step, obs_log_likelihood, StateSpaceModel, TruthRun};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterFamily {
    /// Frozen gain on linear dynamics.
    FixedGain,
    /// Frozen gain with the covariance forecast through the Jacobian of Ψ.
    ExtendedGain,
    /// Square-root EnKF with learnable inflation and localization.
    Enkf {
        members: usize,
        #[serde(default)]
        options: EnkfOptions,
    },
}

impl FilterFamily {
    pub fn is_gain(&self) -> bool {
        !matches!(self, FilterFamily::Enkf { .. })
    }

    /// Rejects parameter shapes, models and objective modes the family cannot run.
    pub fn validate(&self, theta: &FilterParams, model: &StateSpaceModel, cfg: &ObjectiveConfig) -> Result<()> {
        cfg.validate()?;
        match (self, theta) {
            (FilterFamily::FixedGain | FilterFamily::ExtendedGain, FilterParams::Gain(g)) => {
                if g.k.nrows() != model.dim() || g.k.ncols() != model.obs_dim() {
                    return Err(Error::Config(format!(
                        "gain is {}x{}, model needs {}x{}",
                        g.k.nrows(),
                        g.k.ncols(),
                        model.dim(),
                        model.obs_dim()
                    )));
                }
                if matches!(self, FilterFamily::FixedGain) && !matches!(model.dynamics, Dynamics::Linear(_)) {
                    return Err(Error::Config("the fixed-gain family needs linear dynamics; use extended-gain".into()));
                }
                if !model.dynamics.supports_jacobian() {
                    return Err(Error::Config(format!("{} dynamics have no Jacobian for a gain filter", model.dynamics.name())));
                }
                if cfg.kl_mode == Some(KlMode::ProjectedEnsemble) {
                    return Err(Error::Config("projected-ensemble KL needs the EnKF family".into()));
                }
            }
            (FilterFamily::Enkf { members, .. }, FilterParams::InflLoc(p)) => {
                if *members < 2 {
                    return Err(Error::DegenerateEnsemble(*members));
                }
                InflLocParams::new(p.lambda, p.ell)?;
                if cfg.kl_mode == Some(KlMode::GaussianAnalytic) {
                    return Err(Error::Config("Gaussian-analytic KL needs a Gaussian filter family".into()));
                }
                if cfg.nll_mode == super::NllMode::Analytic {
                    return Err(Error::Config("analytic likelihood is not defined for ensembles".into()));
                }
            }
            _ => return Err(Error::Config("filter parameters do not match the filter family".into())),
        }
        Ok(())
    }
}

/// Learnable parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterParams {
    Gain(GainParams),
    InflLoc(InflLocParams),
}

impl FilterParams {
    /// Flat view: the gain in column-major order, or `[λ, ℓ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            FilterParams::Gain(g) => g.k.as_slice().to_vec(),
            FilterParams::InflLoc(p) => vec![p.lambda, p.ell],
        }
    }

    /// Same shape as `self`, entries from `v`.
    pub fn with_vec(&self, v: &[f64]) -> FilterParams {
        match self {
            FilterParams::Gain(g) => {
                FilterParams::Gain(GainParams { k: Matrix::from_column_slice(g.k.nrows(), g.k.ncols(), v) })
            }
            FilterParams::InflLoc(_) => FilterParams::InflLoc(InflLocParams { lambda: v[0], ell: v[1] }),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FilterParams::Gain(g) => g.k.len(),
            FilterParams::InflLoc(_) => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterState {
    Gaussian(GaussianState),
    Ensemble(Ensemble),
}

impl FilterState {
    pub fn mean(&self) -> Vector {
        match self {
            FilterState::Gaussian(g) => g.mean.clone(),
            FilterState::Ensemble(e) => e.mean(),
        }
    }
}

/// `q₀`: `N(m₀, C₀)`, or `N` i.i.d. draws from it.
pub fn initial_state(family: &FilterFamily, model: &StateSpaceModel, cfg: &ObjectiveConfig) -> Result<FilterState> {
    match family {
        FilterFamily::Enkf { members, .. } => {
            let d = model.dim();
            let factor = psd_factor(&model.c0)?;
            let mut rng = stream_rng(cfg.seed, Stream::EnsembleInit, 0);
            let mut e = Matrix::zeros(d, *members);
            for n in 0..*members {
                e.set_column(n, &(&model.m0 + &factor * standard_normal_vec(&mut rng, d)));
            }
            Ok(FilterState::Ensemble(Ensemble::new(e)?))
        }
        _ => Ok(FilterState::Gaussian(GaussianState::new(model.m0.clone(), model.c0.clone()))),
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub forecast: FilterState,
    pub analysis: FilterState,
    pub cost: StepCost,
}

/// The forecast `P q_j`, computed once and shared by every θ tried at the step.
#[derive(Debug, Clone)]
pub struct OnlineStep {
    forecast: Forecast,
    step: usize,
}

#[derive(Debug, Clone)]
enum Forecast {
    Gaussian(GaussianState),
    Members { propagated: Matrix, sigma: Matrix, options: EnkfOptions },
}

impl OnlineStep {
    /// Forecast the prior state for assimilation step `step` (0-based).
    pub fn new(prior: &FilterState, family: &FilterFamily, model: &StateSpaceModel, step: usize, cfg: &ObjectiveConfig) -> Result<Self> {
        let forecast = match (family, prior) {
            (FilterFamily::Enkf { options, .. }, FilterState::Ensemble(ens)) => Forecast::Members {
                propagated: enkf_propagate(ens, &model.dynamics, options, cfg.seed, step)?,
                sigma: model.dynamics.sigma().clone(),
                options: *options,
            },
            (FilterFamily::FixedGain | FilterFamily::ExtendedGain, FilterState::Gaussian(g)) => {
                Forecast::Gaussian(gain_forecast(g, &model.dynamics)?.0)
            }
            _ => return Err(Error::Config("filter state does not match the filter family".into())),
        };
        Ok(Self { forecast, step })
    }

    pub fn forecast_gaussian(&self) -> Option<&GaussianState> {
        match &self.forecast {
            Forecast::Gaussian(g) => Some(g),
            Forecast::Members { .. } => None,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Analysis at θ and its cost.
    pub fn evaluate(&self, theta: &FilterParams, y: &Vector, obs: &ObservationModel, cfg: &ObjectiveConfig) -> Result<StepOutcome> {
        match (&self.forecast, theta) {
            (Forecast::Gaussian(f), FilterParams::Gain(gain)) => {
                let a = fixed_gain_analysis(f, gain, y, obs);
                let kl = kl_gaussian(&a, f)?;
                let nll = expected_nll(Belief::Gaussian(&a), y, obs, cfg, self.step)?;
                Ok(StepOutcome {
                    forecast: FilterState::Gaussian(f.clone()),
                    analysis: FilterState::Gaussian(a),
                    cost: StepCost { kl, nll },
                })
            }
            (Forecast::Members { propagated, sigma, options }, FilterParams::InflLoc(p)) => {
                let rec = enkf_analysis(propagated.clone(), y, p, sigma, obs, options)?;
                let fa = gaussian_projection_with(&rec.analysis, cfg.projection)?;
                let ff = gaussian_projection_with(&rec.forecast, cfg.projection)?;
                let qa = GaussianState::new(fa.mean, ledoit_wolf_shrink(&fa.cov, cfg.shrinkage_gamma));
                let qf = GaussianState::new(ff.mean, ledoit_wolf_shrink(&ff.cov, cfg.shrinkage_gamma));
                let kl = kl_gaussian(&qa, &qf)?;
                let nll = expected_nll(Belief::Ensemble(&rec.analysis), y, obs, cfg, self.step)?;
                Ok(StepOutcome {
                    forecast: FilterState::Ensemble(rec.forecast),
                    analysis: FilterState::Ensemble(rec.analysis),
                    cost: StepCost { kl, nll },
                })
            }
            _ => Err(Error::Config("filter parameters do not match the filter family".into())),
        }
    }
}

/// Single-step online cost `KL(q_{j+1}(θ) ‖ P q_j) + E[−log p(y_{j+1} | v)]`.
pub fn online_objective_step(
    theta: &FilterParams,
    prior: &FilterState,
    y: &Vector,
    step: usize,
    family: &FilterFamily,
    model: &StateSpaceModel,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let s = OnlineStep::new(prior, family, model, step, cfg)?;
    let out = s.evaluate(theta, y, &model.obs, cfg)?;
    Ok(out.cost.kl + out.cost.nll)
}

/// The objective together with the filter trajectory that produced it.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub breakdown: ObjectiveBreakdown,
    /// Analysis means for steps `1..=J`.
    pub analysis_means: Vec<Vector>,
    /// Analysis Gaussians for steps `1..=J` (Gaussian families only).
    pub analysis_states: Vec<GaussianState>,
}

pub fn run_filter(
    theta: &FilterParams,
    family: &FilterFamily,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<FilterRun> {
    family.validate(theta, model, cfg)?;
    let mut state = initial_state(family, model, cfg)?;
    let mut run = FilterRun { breakdown: ObjectiveBreakdown::default(), analysis_means: Vec::new(), analysis_states: Vec::new() };
    for (j, y) in truth.observations.iter().enumerate() {
        let outcome = OnlineStep::new(&state, family, model, j, cfg)
            .and_then(|s| s.evaluate(theta, y, &model.obs, cfg))
            .and_then(|o| {
                if o.cost.kl.is_finite() && o.cost.nll.is_finite() {
                    Ok(o)
                } else {
                    Err(Error::Blowup { step: j + 1, context: "objective term became non-finite".into() })
                }
            });
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                return Err(Error::ObjectiveFailed {
                    step: j + 1,
                    partial: Box::new(run.breakdown),
                    source: Box::new(at_step(e, j + 1)),
                })
            }
        };
        run.breakdown.push(outcome.cost);
        run.analysis_means.push(outcome.analysis.mean());
        if let FilterState::Gaussian(g) = &outcome.analysis {
            run.analysis_states.push(g.clone());
        }
        state = outcome.analysis;
    }
    Ok(run)
}

/// `J(θ) = Σ_j KL(q_{j+1} ‖ P q_j) + E[−log p(y_{j+1} | v)]` from `q₀ = Π₀`.
pub fn offline_objective(
    theta: &FilterParams,
    family: &FilterFamily,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveBreakdown> {
    run_filter(theta, family, model, truth, cfg).map(|r| r.breakdown)
}

/// Online cost written through the affine transport `T(v) = v + K(y − Hv)`
/// applied to forecast samples, with the forecast density replaced by the
/// Gaussian projection of those samples.
pub fn online_transport_objective_affine(
    gain: &GainParams,
    forecast_samples: &Ensemble,
    y: &Vector,
    obs: &ObservationModel,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let d = forecast_samples.dim();
    let k = &gain.k;
    let m = Matrix::identity(d, d) - k * obs.h();
    let det = m.determinant();
    if !(det.abs() > 1e-12) {
        return Err(Error::SingularTransport(det.abs()));
    }
    let log_det = det.abs().ln();
    let projected = gaussian_projection_with(forecast_samples, cfg.projection)?;
    let l = cholesky(&projected.cov, "projected forecast covariance")?.l();
    let log_norm = 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + chol_log_det(&l));
    let n = forecast_samples.size() as f64;
    let mut acc = 0.0;
    for v in forecast_samples.members.column_iter() {
        let t = v + k * (y - obs.h() * v);
        let w = l.solve_lower_triangular(&(&t - &projected.mean)).expect("positive diagonal");
        let log_density = -0.5 * w.norm_squared() - log_norm;
        acc -= log_density - log_det;
        acc -= obs_log_likelihood(y, &t, obs)?;
    }
    Ok(acc / n)
}
