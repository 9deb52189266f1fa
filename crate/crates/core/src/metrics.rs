//! RMSE, KL to the exact filter and out-of-sample evaluation.

use serde::{Deserialize, Serialize};

use crate::filters::{kalman_filter, GaussianState};
use crate::linalg::frobenius;
use crate::models::Dynamics;
use crate::objective::{kl_gaussian, run_filter, FilterFamily, FilterParams, ObjectiveConfig};
use crate::ssm::{simulate_truth, StateSpaceModel, TruthRun};
use crate::{Error, Matrix, Result, Vector};

/// Root-mean-square error over every step and component.
pub fn rmse(means: &[Vector], truth: &[Vector]) -> Result<f64> {
    if means.len() != truth.len() {
        return Err(Error::dim(format!("{} filter means vs {} truth states", means.len(), truth.len())));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (m, v) in means.iter().zip(truth) {
        if m.len() != v.len() {
            return Err(Error::dim("filter mean and truth state differ in length"));
        }
        acc += (m - v).norm_squared();
        count += m.len();
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((acc / count as f64).sqrt())
}

/// Per-step `KL(learned_j ‖ reference_j)` and its time average.
pub fn kl_to_reference(learned: &[GaussianState], reference: &[GaussianState]) -> Result<(Vec<f64>, f64)> {
    if learned.len() != reference.len() {
        return Err(Error::dim(format!("{} learned states vs {} reference states", learned.len(), reference.len())));
    }
    let per_step = learned.iter().zip(reference).map(|(a, b)| kl_gaussian(a, b)).collect::<Result<Vec<_>>>()?;
    let mean = if per_step.is_empty() { 0.0 } else { per_step.iter().sum::<f64>() / per_step.len() as f64 };
    Ok((per_step, mean))
}

/// Exact Kalman analysis states over a truth run; `None` unless the dynamics are linear.
pub fn reference_trace(model: &StateSpaceModel, truth: &TruthRun) -> Result<Option<Vec<GaussianState>>> {
    let Dynamics::Linear(lin) = &model.dynamics else {
        return Ok(None);
    };
    let init = GaussianState::new(model.m0.clone(), model.c0.clone());
    let trace = kalman_filter(&init, lin, &model.obs, &truth.observations)?;
    Ok(Some(trace.into_iter().map(|(_, a)| a).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub per_step_kl_to_reference: Vec<f64>,
    pub mean_kl_to_reference: Option<f64>,
    pub gain_frobenius_error: Option<f64>,
    pub in_sample: bool,
    /// Leading analysis steps left out of the RMSE.
    pub burn_in: usize,
    pub seed: u64,
    pub horizon: usize,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
}

/// Filter a truth run with frozen parameters and report RMSE and, for linear
/// dynamics, the KL trace against the exact Kalman filter.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_on(
    theta: &FilterParams,
    family: &FilterFamily,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
    reference_gain: Option<&Matrix>,
    in_sample: bool,
    burn_in: usize,
) -> Result<EvalReport> {
    if burn_in >= truth.horizon() {
        return Err(Error::Config(format!("burn-in {burn_in} leaves no steps of a {}-step run", truth.horizon())));
    }
    let gain_frobenius_error = match (theta, reference_gain) {
        (FilterParams::Gain(g), Some(k)) if g.k.shape() == k.shape() => Some(frobenius(&(&g.k - k))),
        _ => None,
    };
    let mut report = EvalReport {
        rmse: f64::INFINITY,
        per_step_kl_to_reference: Vec::new(),
        mean_kl_to_reference: None,
        gain_frobenius_error,
        in_sample,
        burn_in,
        seed: truth.seed,
        horizon: truth.horizon(),
        diverged: false,
        divergence_step: None,
    };
    let run = match run_filter(theta, family, model, truth, cfg) {
        Ok(r) => r,
        Err(Error::ObjectiveFailed { step, .. }) => {
            report.diverged = true;
            report.divergence_step = Some(step);
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.rmse = rmse(&run.analysis_means[burn_in..], &truth.states[1 + burn_in..])?;
    if family.is_gain() {
        if let Some(reference) = reference_trace(model, truth)? {
            let (per_step, mean) = kl_to_reference(&run.analysis_states, &reference)?;
            report.per_step_kl_to_reference = per_step;
            report.mean_kl_to_reference = Some(mean);
        }
    }
    Ok(report)
}

/// Evaluate on a freshly simulated trajectory of `horizon` steps.
#[allow(clippy::too_many_arguments)]
pub fn out_of_sample_eval(
    theta: &FilterParams,
    family: &FilterFamily,
    model: &StateSpaceModel,
    fresh_seed: u64,
    horizon: usize,
    training_seed: u64,
    cfg: &ObjectiveConfig,
    reference_gain: Option<&Matrix>,
    burn_in: usize,
) -> Result<EvalReport> {
    if theta.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("parameters to evaluate are not finite".into()));
    }
    let truth = simulate_truth(model, horizon, fresh_seed)?;
    evaluate_on(theta, family, model, &truth, cfg, reference_gain, fresh_seed == training_seed, burn_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_rmse() {
        let means = [Vector::from_element(1, 1.0), Vector::from_element(1, 3.0)];
        let truth = [Vector::zeros(1), Vector::zeros(1)];
        assert!((rmse(&means, &truth).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&means[..1], &truth).is_err());
    }
}
