//! Gradients, descent, online learning and parameter sweeps.

mod enkf_grad;
mod gain_grad;

pub use enkf_grad::enkf_gradient_forward;
pub use gain_grad::{gain_gradient_adjoint, gain_gradient_forward, gain_objective_tangents, gain_step_gradient};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::filters::{GainParams, InflLocParams};
use crate::objective::{initial_state, offline_objective, FilterFamily, FilterParams, ObjectiveConfig, OnlineStep, StepCost};
use crate::ssm::{StateSpaceModel, TruthRun};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    CentralFd,
    ForwardSensitivity,
    /// Reverse sweep; gain families only, others use forward sensitivities.
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub grad_mode: GradMode,
    /// Relative central-difference step: `h_i = fd_step · (1 + |θ_i|)`.
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, iterations: 100, grad_mode: GradMode::Adjoint, fd_step: 1e-5 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        Ok(())
    }
}

/// Central differences `(J(θ + h eᵢ) − J(θ − h eᵢ)) / 2h`, coordinates in parallel.
pub fn grad_central_fd<F>(objective: F, theta: &[f64], fd_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let h = fd_step * (1.0 + theta[i].abs());
            let mut probe = theta.to_vec();
            probe[i] = theta[i] + h;
            let plus = objective(&probe).map_err(|_| Error::NonFiniteProbe(i))?;
            probe[i] = theta[i] - h;
            let minus = objective(&probe).map_err(|_| Error::NonFiniteProbe(i))?;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFiniteProbe(i));
            }
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Tangent-propagated gradient of the offline objective.
///
/// Returns [`Error::Unsupported`] when the dynamics offer no tangent, the
/// signal to fall back to finite differences.
pub fn grad_forward_sensitivity(
    family: &FilterFamily,
    theta: &FilterParams,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<Vec<f64>> {
    forward_value_and_gradient(family, theta, model, truth, cfg).map(|(_, g)| g)
}

fn forward_value_and_gradient(
    family: &FilterFamily,
    theta: &FilterParams,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    family.validate(theta, model, cfg)?;
    match (family, theta) {
        (FilterFamily::Enkf { members, options }, FilterParams::InflLoc(p)) => {
            let (v, g) = enkf_gradient_forward(p, *members, options, model, truth, cfg)?;
            Ok((v, g.to_vec()))
        }
        (_, FilterParams::Gain(g)) => {
            let (v, grad) = gain_gradient_forward(&g.k, model, truth, cfg)?;
            Ok((v, grad.as_slice().to_vec()))
        }
        _ => Err(Error::Config("filter parameters do not match the filter family".into())),
    }
}

/// Offline objective and gradient under `mode`, falling back to finite
/// differences when the requested mode is unavailable.
pub fn objective_and_gradient(
    mode: GradMode,
    family: &FilterFamily,
    theta: &FilterParams,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
    fd_step: f64,
) -> Result<(f64, Vec<f64>)> {
    let fast = match (mode, theta) {
        (GradMode::CentralFd, _) => None,
        (GradMode::Adjoint, FilterParams::Gain(g)) => {
            family.validate(theta, model, cfg)?;
            Some(gain_gradient_adjoint(&g.k, model, truth, cfg).map(|(v, grad)| (v, grad.as_slice().to_vec())))
        }
        _ => Some(forward_value_and_gradient(family, theta, model, truth, cfg)),
    };
    match fast {
        Some(Err(Error::Unsupported(_))) | None => {
            let value = offline_objective(theta, family, model, truth, cfg)?.total;
            let f = |v: &[f64]| offline_objective(&theta.with_vec(v), family, model, truth, cfg).map(|b| b.total);
            Ok((value, grad_central_fd(f, &theta.to_vec(), fd_step)?))
        }
        Some(r) => r,
    }
}

/// Extra quantities recorded alongside the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub gain_error: Option<f64>,
    pub kl_to_reference: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Descent iteration, or assimilation step for online learning.
    pub iteration: usize,
    pub objective: f64,
    pub theta_norm: f64,
    #[serde(flatten)]
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }
}

#[derive(Debug)]
pub struct DescentOutcome {
    pub theta: Vec<f64>,
    pub trace: TrainingTrace,
    /// Set when the objective failed mid-run; `theta` is the last good iterate.
    pub error: Option<Error>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Plain fixed-step descent `θ ← θ − α∇J(θ)`; the trace holds `iterations + 1` records.
pub fn gradient_descent<F, D>(mut objective: F, theta0: &[f64], opt: &OptimizerConfig, mut diagnostics: D) -> DescentOutcome
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    D: FnMut(&[f64]) -> Diagnostics,
{
    let mut theta = theta0.to_vec();
    let mut good = theta.clone();
    let mut trace = TrainingTrace::default();
    for it in 0..=opt.iterations {
        let (value, grad) = match objective(&theta) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => (v, g),
            Ok(_) => {
                let e = Error::Blowup { step: it, context: "objective or gradient became non-finite during descent".into() };
                return DescentOutcome { theta: good, trace, error: Some(e) };
            }
            Err(e) => return DescentOutcome { theta: good, trace, error: Some(e) },
        };
        trace.records.push(TraceRecord { iteration: it, objective: value, theta_norm: norm(&theta), diagnostics: diagnostics(&theta) });
        good.clone_from(&theta);
        if it == opt.iterations {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= opt.learning_rate * g;
        }
    }
    DescentOutcome { theta, trace, error: None }
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    /// `θ*_1..θ*_J`.
    pub thetas: Vec<Vec<f64>>,
    pub theta_bar: Vec<f64>,
    /// Cost of each step at its committed parameter.
    pub step_costs: Vec<StepCost>,
    /// Steps whose inner optimization failed and kept the previous θ.
    pub flagged: Vec<usize>,
    pub trace: TrainingTrace,
}

/// Online learning: at each step freeze `P q*_j`, descend the single-step cost
/// from the previous `θ*`, commit and advance the filter.
pub fn online_learn<D>(
    family: &FilterFamily,
    theta0: &FilterParams,
    model: &StateSpaceModel,
    truth: &TruthRun,
    opt: &OptimizerConfig,
    cfg: &ObjectiveConfig,
    mut diagnostics: D,
) -> Result<OnlineOutcome>
where
    D: FnMut(usize, &[f64]) -> Diagnostics,
{
    family.validate(theta0, model, cfg)?;
    opt.validate()?;
    let mut state = initial_state(family, model, cfg)?;
    let mut theta = theta0.to_vec();
    let mut out = OnlineOutcome {
        thetas: Vec::with_capacity(truth.horizon()),
        theta_bar: vec![0.0; theta.len()],
        step_costs: Vec::with_capacity(truth.horizon()),
        flagged: Vec::new(),
        trace: TrainingTrace::default(),
    };
    for (j, y) in truth.observations.iter().enumerate() {
        let step = OnlineStep::new(&state, family, model, j, cfg)
            .map_err(|e| Error::ObjectiveFailed { step: j + 1, partial: Box::default(), source: Box::new(e) })?;
        let cost_and_grad = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
            let params = theta0.with_vec(v);
            match (&params, step.forecast_gaussian(), opt.grad_mode) {
                (FilterParams::Gain(g), Some(f), GradMode::Adjoint | GradMode::ForwardSensitivity) => {
                    let (c, grad) = gain_step_gradient(f, &g.k, y, &model.obs, cfg, j)?;
                    Ok((c, grad.as_slice().to_vec()))
                }
                _ => {
                    let f = |w: &[f64]| step.evaluate(&theta0.with_vec(w), y, &model.obs, cfg).map(|o| o.cost.kl + o.cost.nll);
                    Ok((f(v)?, grad_central_fd(f, v, opt.fd_step)?))
                }
            }
        };
        let inner = gradient_descent(cost_and_grad, &theta, &OptimizerConfig { iterations: opt.iterations, ..opt.clone() }, |_| Diagnostics::default());
        if inner.error.is_none() {
            theta = inner.theta;
        } else {
            out.flagged.push(j + 1);
        }
        let outcome = step
            .evaluate(&theta0.with_vec(&theta), y, &model.obs, cfg)
            .map_err(|e| Error::ObjectiveFailed { step: j + 1, partial: Box::default(), source: Box::new(e) })?;
        out.trace.records.push(TraceRecord {
            iteration: j + 1,
            objective: outcome.cost.kl + outcome.cost.nll,
            theta_norm: norm(&theta),
            diagnostics: diagnostics(j + 1, &theta),
        });
        out.step_costs.push(outcome.cost);
        out.thetas.push(theta.clone());
        state = outcome.analysis;
    }
    let count = out.thetas.len().max(1) as f64;
    for t in &out.thetas {
        for (acc, v) in out.theta_bar.iter_mut().zip(t) {
            *acc += v / count;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub lambdas: Vec<f64>,
    pub ells: Vec<f64>,
    /// `costs[i][k]` at `(lambdas[i], ells[k])`; `+∞` marks a failed cell.
    pub costs: Vec<Vec<f64>>,
    pub argmin: Option<(usize, usize)>,
    pub min: f64,
    pub failed_cells: usize,
}

/// Offline objective on the `λ × ℓ` grid with identical seeds in every cell.
pub fn grid_sweep(
    family: &FilterFamily,
    lambdas: &[f64],
    ells: &[f64],
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<SweepResult> {
    if lambdas.is_empty() || ells.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    if !matches!(family, FilterFamily::Enkf { .. }) {
        return Err(Error::Config("grid sweeps need the EnKF family".into()));
    }
    family.validate(&FilterParams::InflLoc(InflLocParams { lambda: 1.0, ell: 1.0 }), model, cfg)?;
    for &ell in ells {
        InflLocParams::new(1.0, ell)?;
    }
    let cells: Vec<(usize, usize)> = (0..lambdas.len()).flat_map(|i| (0..ells.len()).map(move |k| (i, k))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, k)| {
            let theta = FilterParams::InflLoc(InflLocParams { lambda: lambdas[i], ell: ells[k] });
            match offline_objective(&theta, family, model, truth, cfg) {
                Ok(b) if b.total.is_finite() => b.total,
                _ => f64::INFINITY,
            }
        })
        .collect();
    let mut costs = vec![vec![f64::INFINITY; ells.len()]; lambdas.len()];
    let mut argmin = None;
    let mut min = f64::INFINITY;
    let mut failed_cells = 0;
    for (&(i, k), &v) in cells.iter().zip(&values) {
        costs[i][k] = v;
        if v.is_infinite() {
            failed_cells += 1;
        }
        if v < min {
            min = v;
            argmin = Some((i, k));
        }
    }
    Ok(SweepResult { lambdas: lambdas.to_vec(), ells: ells.to_vec(), costs, argmin, min, failed_cells })
}

/// Gain parameters from a flat column-major vector.
pub fn gain_from_vec(rows: usize, cols: usize, v: &[f64]) -> GainParams {
    GainParams { k: Matrix::from_column_slice(rows, cols, v) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_sine_at_zero() {
        let g = grad_central_fd(|t: &[f64]| Ok(t[0].sin()), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fd_is_exact_on_quadratics() {
        let theta = [0.3, -1.2, 4.0];
        let g = grad_central_fd(|t: &[f64]| Ok(0.5 * t.iter().map(|x| x * x).sum::<f64>()), &theta, 1e-3).unwrap();
        for (a, b) in g.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rate_keeps_theta() {
        let opt = OptimizerConfig { learning_rate: 0.0, iterations: 5, ..Default::default() };
        let out = gradient_descent(|t: &[f64]| Ok((t[0] * t[0], vec![2.0 * t[0]])), &[3.0], &opt, |_| Diagnostics::default());
        assert_eq!(out.theta, vec![3.0]);
        assert_eq!(out.trace.records.len(), 6);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let r = grad_central_fd(|t: &[f64]| Ok(if t[1] > 0.0 { f64::NAN } else { 0.0 }), &[0.0, 0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteProbe(1))));
    }
}
