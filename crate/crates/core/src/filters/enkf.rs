use serde::{Deserialize, Serialize};

use super::{Ensemble, InflLocParams};
use crate::linalg::{cholesky, psd_factor, sym, SpectralSqrt};
use crate::models::{Dynamics, ObservationModel};
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vec, Stream};
use crate::{Matrix, Result, Vector};

/// How process noise enters the ensemble forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessNoiseMode {
    /// `Σ` is added to the localized sample covariance.
    #[default]
    Additive,
    /// Each propagated member receives its own draw `ξ ~ N(0, Σ)`.
    Perturb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnkfOptions {
    /// Apply `λ` only to the forecast anomalies, not again in the analysis update.
    pub single_inflation: bool,
    pub process_noise: ProcessNoiseMode,
    /// Physical length of one grid index in the localization distance.
    pub distance_unit: f64,
}

impl Default for EnkfOptions {
    fn default() -> Self {
        Self { single_inflation: false, process_noise: ProcessNoiseMode::Additive, distance_unit: 1.0 }
    }
}

/// `L_ik = exp(−D_ik² / ℓ)` with cyclic index distance.
pub fn localization_matrix(dim: usize, ell: f64) -> Matrix {
    localization_matrix_scaled(dim, ell, 1.0)
}

pub fn localization_matrix_scaled(dim: usize, ell: f64, unit: f64) -> Matrix {
    Matrix::from_fn(dim, dim, |i, k| {
        let gap = i.abs_diff(k);
        let dist = gap.min(dim - gap) as f64 * unit;
        (-dist * dist / ell).exp()
    })
}

/// Everything one square-root EnKF step computes.
#[derive(Debug, Clone)]
pub struct EnkfStepRecord {
    /// Members after Ψ (and member noise), before inflation.
    pub propagated: Matrix,
    pub forecast_mean: Vector,
    /// `Ê − m̂1ᵀ` before inflation.
    pub raw_anomalies: Matrix,
    /// `λ(Ê − m̂1ᵀ)`.
    pub anomalies: Matrix,
    pub localization: Matrix,
    /// Sample covariance of the inflated anomalies.
    pub sample_cov: Matrix,
    pub c_hat: Matrix,
    pub innovation_chol: Matrix,
    pub gain: Matrix,
    pub innovation: Vector,
    pub sqrt: SpectralSqrt,
    /// Factor multiplying `(I−KH)^{1/2}` in the anomaly update.
    pub analysis_inflation: f64,
    pub forecast: Ensemble,
    pub analysis: Ensemble,
}

/// Square-root EnKF step with multiplicative inflation and Hadamard localization.
///
/// `seed` and `step` address the member-noise streams and are only read in
/// [`ProcessNoiseMode::Perturb`].
#[allow(clippy::too_many_arguments)]
pub fn enkf_step(
    ens: &Ensemble,
    y: &Vector,
    params: &InflLocParams,
    dynamics: &Dynamics,
    obs: &ObservationModel,
    opts: &EnkfOptions,
    seed: u64,
    step: usize,
) -> Result<(Ensemble, Ensemble)> {
    let rec = enkf_step_detailed(ens, y, params, dynamics, obs, opts, seed, step)?;
    Ok((rec.forecast, rec.analysis))
}

#[allow(clippy::too_many_arguments)]
pub fn enkf_step_detailed(
    ens: &Ensemble,
    y: &Vector,
    params: &InflLocParams,
    dynamics: &Dynamics,
    obs: &ObservationModel,
    opts: &EnkfOptions,
    seed: u64,
    step: usize,
) -> Result<EnkfStepRecord> {
    let propagated = enkf_propagate(ens, dynamics, opts, seed, step)?;
    enkf_analysis(propagated, y, params, dynamics.sigma(), obs, opts)
}

/// Members pushed through Ψ, plus member noise in [`ProcessNoiseMode::Perturb`].
pub fn enkf_propagate(ens: &Ensemble, dynamics: &Dynamics, opts: &EnkfOptions, seed: u64, step: usize) -> Result<Matrix> {
    let d = ens.dim();
    let mut propagated = dynamics.propagate_columns(&ens.members)?;
    if opts.process_noise == ProcessNoiseMode::Perturb {
        let factor = psd_factor(dynamics.sigma())?;
        for (c, mut col) in propagated.column_iter_mut().enumerate() {
            let mut rng = rng_from_seed(derive_seed(seed, &[Stream::MemberNoise as u64, step as u64, c as u64]));
            col += &factor * standard_normal_vec(&mut rng, d);
        }
    }
    Ok(propagated)
}

/// Inflation, localization and the square-root analysis of propagated members.
pub fn enkf_analysis(
    propagated: Matrix,
    y: &Vector,
    params: &InflLocParams,
    sigma: &Matrix,
    obs: &ObservationModel,
    opts: &EnkfOptions,
) -> Result<EnkfStepRecord> {
    let n = propagated.ncols();
    let d = propagated.nrows();
    if n < 2 {
        return Err(crate::Error::DegenerateEnsemble(n));
    }
    let forecast_mean = propagated.column_mean();
    let mut raw_anomalies = propagated.clone();
    for mut col in raw_anomalies.column_iter_mut() {
        col -= &forecast_mean;
    }
    let anomalies = &raw_anomalies * params.lambda;
    let sample_cov = sym(&(&anomalies * anomalies.transpose() / (n as f64 - 1.0)));
    let localization = localization_matrix_scaled(d, params.ell, opts.distance_unit);
    let mut c_hat = localization.component_mul(&sample_cov);
    if opts.process_noise == ProcessNoiseMode::Additive {
        c_hat += sigma;
    }
    let c_hat = sym(&c_hat);

    let h = obs.h();
    let s = sym(&(h * &c_hat * h.transpose() + obs.gamma()));
    let chol = cholesky(&s, "ensemble innovation covariance HĈHᵀ + Γ")?;
    let gain = chol.solve(&(h * &c_hat)).transpose();
    let innovation = y - h * &forecast_mean;
    let mean = &forecast_mean + &gain * &innovation;

    let g = h.transpose() * obs.gamma_inv() * h;
    let sqrt = SpectralSqrt::posterior_contraction(&c_hat, &g)?;
    let analysis_inflation = if opts.single_inflation { 1.0 } else { params.lambda };
    let mut members = sqrt.apply(&anomalies) * analysis_inflation;
    for mut col in members.column_iter_mut() {
        col += &mean;
    }
    let mut forecast_members = anomalies.clone();
    for mut col in forecast_members.column_iter_mut() {
        col += &forecast_mean;
    }
    Ok(EnkfStepRecord {
        propagated,
        forecast_mean,
        raw_anomalies,
        anomalies,
        localization,
        sample_cov,
        c_hat,
        innovation_chol: chol.l(),
        gain,
        innovation,
        sqrt,
        analysis_inflation,
        forecast: Ensemble::new(forecast_members)?,
        analysis: Ensemble::new(members)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearDynamics;

    #[test]
    fn four_point_cycle_distances() {
        let l = localization_matrix(4, 1.0);
        assert!((l[(0, 2)] - (-4.0f64).exp()).abs() < 1e-15);
        assert!((l[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((l[(0, 3)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((0..4).all(|i| l[(i, i)] == 1.0));
    }

    #[test]
    fn analysis_mean_is_kalman_mean() {
        let dynamics = Dynamics::Linear(LinearDynamics::random(5, 1, 0.25).unwrap());
        let obs = ObservationModel::every_other(5, 0.5).unwrap();
        let mut rng = rng_from_seed(3);
        let members = Matrix::from_fn(5, 7, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
        let ens = Ensemble::new(members).unwrap();
        let y = Vector::from_element(3, 0.3);
        let rec = enkf_step_detailed(&ens, &y, &InflLocParams { lambda: 1.1, ell: 3.0 }, &dynamics, &obs, &EnkfOptions::default(), 0, 0)
            .unwrap();
        let expect = &rec.forecast_mean + &rec.gain * &rec.innovation;
        assert!((rec.analysis.mean() - expect).amax() < 1e-10);
    }
}
