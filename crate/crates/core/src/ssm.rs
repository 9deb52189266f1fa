//! State-space model, truth trajectories and the observation likelihood.

use crate::linalg::psd_factor;
use crate::models::{Dynamics, ObservationModel};
use crate::rng::{standard_normal_vec, stream_rng, Stream};
use crate::{Error, Matrix, Result, Vector};

/// `v_{j+1} = Ψ(v_j) + ξ_j`, `y_{j+1} = H v_{j+1} + η_{j+1}`, `v_0 ~ N(m₀, C₀)`.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub dynamics: Dynamics,
    pub obs: ObservationModel,
    pub m0: Vector,
    pub c0: Matrix,
}

impl StateSpaceModel {
    pub fn new(dynamics: Dynamics, obs: ObservationModel, m0: Vector, c0: Matrix) -> Result<Self> {
        let d = dynamics.dim();
        if obs.state_dim() != d {
            return Err(Error::InvalidModel(format!("H has {} columns, state has {d}", obs.state_dim())));
        }
        if m0.len() != d || c0.nrows() != d || c0.ncols() != d {
            return Err(Error::InvalidModel("initial mean/covariance do not match the state dimension".into()));
        }
        Ok(Self { dynamics, obs, m0, c0 })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.obs_dim()
    }
}

/// States `v_0..v_J` and observations `y_1..y_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRun {
    pub states: Vec<Vector>,
    pub observations: Vec<Vector>,
    pub seed: u64,
}

impl TruthRun {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    /// The first `steps` assimilation steps.
    pub fn truncated(&self, steps: usize) -> TruthRun {
        let steps = steps.min(self.horizon());
        TruthRun {
            states: self.states[..=steps].to_vec(),
            observations: self.observations[..steps].to_vec(),
            seed: self.seed,
        }
    }
}

pub fn simulate_truth(model: &StateSpaceModel, horizon: usize, seed: u64) -> Result<TruthRun> {
    if horizon == 0 {
        return Err(Error::Config("horizon J must be at least 1".into()));
    }
    let d = model.dim();
    let p = model.obs_dim();
    let init_factor = psd_factor(&model.c0)?;
    let noise_factor = psd_factor(model.dynamics.sigma())?;
    let obs_factor = psd_factor(model.obs.gamma())?;

    let mut v = &model.m0 + &init_factor * standard_normal_vec(&mut stream_rng(seed, Stream::TruthInit, 0), d);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon);
    states.push(v.clone());
    for j in 0..horizon {
        let xi = &noise_factor * standard_normal_vec(&mut stream_rng(seed, Stream::ProcessNoise, j as u64), d);
        v = model.dynamics.propagate(&v).map_err(|e| at_step(e, j + 1))? + xi;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Blowup { step: j + 1, context: "truth state became non-finite".into() });
        }
        let eta = &obs_factor * standard_normal_vec(&mut stream_rng(seed, Stream::ObservationNoise, j as u64 + 1), p);
        observations.push(model.obs.apply(&v) + eta);
        states.push(v.clone());
    }
    Ok(TruthRun { states, observations, seed })
}

pub(crate) fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Blowup { context, .. } => Error::Blowup { step, context },
        other => other,
    }
}

/// `log N(y; Hv, Γ) = −½‖y − Hv‖²_Γ − ½ log det(2πΓ)`.
pub fn obs_log_likelihood(y: &Vector, v: &Vector, obs: &ObservationModel) -> Result<f64> {
    if y.len() != obs.obs_dim() || v.len() != obs.state_dim() {
        return Err(Error::dim(format!(
            "y has length {}, v has length {}, H is {}x{}",
            y.len(),
            v.len(),
            obs.obs_dim(),
            obs.state_dim()
        )));
    }
    let r = y - obs.apply(v);
    Ok(-0.5 * obs.mahalanobis(&r) - 0.5 * obs.log_det_2pi_gamma())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearDynamics;

    #[test]
    fn scalar_likelihood_by_hand() {
        let obs = ObservationModel::new(Matrix::identity(1, 1), Matrix::from_element(1, 1, 4.0)).unwrap();
        let ll = obs_log_likelihood(&Vector::from_element(1, 2.0), &Vector::zeros(1), &obs).unwrap();
        let expect = -0.5 - 0.5 * (8.0 * std::f64::consts::PI).ln();
        assert!((ll - expect).abs() < 1e-14);
    }

    #[test]
    fn noiseless_linear_run_is_deterministic_power_sequence() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.8]);
        let dynamics = Dynamics::Linear(LinearDynamics::new(a.clone(), Matrix::zeros(2, 2)).unwrap());
        // Γ must be SPD for the likelihood, so a tiny Γ stands in for zero.
        let obs = ObservationModel::identity(2, 1e-300).unwrap();
        let m0 = Vector::from_vec(vec![1.0, -1.0]);
        let model = StateSpaceModel::new(dynamics, obs, m0.clone(), Matrix::zeros(2, 2)).unwrap();
        let run = simulate_truth(&model, 5, 3).unwrap();
        let mut v = m0;
        for j in 0..=5 {
            assert!((&run.states[j] - &v).amax() < 1e-15);
            if j > 0 {
                assert!((&run.observations[j - 1] - &v).amax() < 1e-140);
            }
            v = &a * v;
        }
    }
}
