use super::{GainParams, GaussianState};
use crate::linalg::{cholesky, frobenius, sym};
use crate::models::{Dynamics, LinearDynamics, ObservationModel};
use crate::{Error, Matrix, Result, Vector};

pub fn kalman_predict(state: &GaussianState, dynamics: &LinearDynamics) -> GaussianState {
    let a = dynamics.a();
    GaussianState::new(a * &state.mean, a * &state.cov * a.transpose() + dynamics.sigma())
}

/// `K = Ĉ Hᵀ (H Ĉ Hᵀ + Γ)⁻¹`.
fn kalman_gain(c_hat: &Matrix, obs: &ObservationModel) -> Result<Matrix> {
    let h = obs.h();
    let s = sym(&(h * c_hat * h.transpose() + obs.gamma()));
    let chol = cholesky(&s, "innovation covariance HĈHᵀ + Γ")?;
    // K = (S⁻¹ H Ĉ)ᵀ since S and Ĉ are symmetric.
    Ok(chol.solve(&(h * c_hat)).transpose())
}

pub fn kalman_analysis(forecast: &GaussianState, y: &Vector, obs: &ObservationModel) -> Result<(GaussianState, Matrix)> {
    let k = kalman_gain(&forecast.cov, obs)?;
    let h = obs.h();
    let mean = &forecast.mean + &k * (y - h * &forecast.mean);
    let d = forecast.dim();
    let cov = (Matrix::identity(d, d) - &k * h) * &forecast.cov;
    Ok((GaussianState::new(mean, cov), k))
}

/// Exact Kalman filter over `observations`; returns the (forecast, analysis) pair of every step.
pub fn kalman_filter(
    initial: &GaussianState,
    dynamics: &LinearDynamics,
    obs: &ObservationModel,
    observations: &[Vector],
) -> Result<Vec<(GaussianState, GaussianState)>> {
    let mut state = initial.clone();
    let mut out = Vec::with_capacity(observations.len());
    for y in observations {
        let forecast = kalman_predict(&state, dynamics);
        let (analysis, _) = kalman_analysis(&forecast, y, obs)?;
        state = analysis.clone();
        out.push((forecast, analysis));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub c_hat: Matrix,
    pub k: Matrix,
    pub c: Matrix,
    /// Frobenius change of `Ĉ` at every iteration.
    pub residuals: Vec<f64>,
}

impl SteadyState {
    /// `‖Ĉ − A(I−KH)ĈAᵀ − Σ‖_F`.
    pub fn fixed_point_residual(&self, dynamics: &LinearDynamics, obs: &ObservationModel) -> f64 {
        let a = dynamics.a();
        let d = self.c_hat.nrows();
        let m = Matrix::identity(d, d) - &self.k * obs.h();
        frobenius(&(&self.c_hat - a * m * &self.c_hat * a.transpose() - dynamics.sigma()))
    }
}

/// Riccati fixed point from `Ĉ₀ = Σ`.
pub fn steady_state_kalman(
    dynamics: &LinearDynamics,
    obs: &ObservationModel,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    let a = dynamics.a();
    let d = dynamics.dim();
    let eye = Matrix::identity(d, d);
    let mut c_hat = dynamics.sigma().clone();
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let k = kalman_gain(&c_hat, obs)?;
        let next = sym(&(a * (&eye - &k * obs.h()) * &c_hat * a.transpose() + dynamics.sigma()));
        let res = frobenius(&(&next - &c_hat));
        residuals.push(res);
        c_hat = next;
        if !res.is_finite() {
            break;
        }
        if res < tol {
            let k = kalman_gain(&c_hat, obs)?;
            let c = sym(&((&eye - &k * obs.h()) * &c_hat));
            return Ok(SteadyState { c_hat, k, c, residuals });
        }
    }
    Err(Error::NonConvergence {
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// `(N(Ψ(m), J C Jᵀ + Σ), J)` with `J = ∂Ψ(m)`.
pub fn gain_forecast(state: &GaussianState, dynamics: &Dynamics) -> Result<(GaussianState, Matrix)> {
    let (mean, jac) = dynamics.linearize(&state.mean)?;
    let cov = &jac * &state.cov * jac.transpose() + dynamics.sigma();
    Ok((GaussianState::new(mean, cov), jac))
}

/// Mean update with a frozen gain and the Joseph covariance update.
pub fn fixed_gain_analysis(forecast: &GaussianState, gain: &GainParams, y: &Vector, obs: &ObservationModel) -> GaussianState {
    let h = obs.h();
    let k = &gain.k;
    let d = forecast.dim();
    let mean = &forecast.mean + k * (y - h * &forecast.mean);
    let m = Matrix::identity(d, d) - k * h;
    let cov = &m * &forecast.cov * m.transpose() + k * obs.gamma() * k.transpose();
    GaussianState::new(mean, cov)
}

pub fn fixed_gain_step(
    state: &GaussianState,
    gain: &GainParams,
    y: &Vector,
    dynamics: &LinearDynamics,
    obs: &ObservationModel,
) -> (GaussianState, GaussianState) {
    let forecast = kalman_predict(state, dynamics);
    let analysis = fixed_gain_analysis(&forecast, gain, y, obs);
    (forecast, analysis)
}

pub fn extended_fixed_gain_step(
    state: &GaussianState,
    gain: &GainParams,
    y: &Vector,
    dynamics: &Dynamics,
    obs: &ObservationModel,
) -> Result<(GaussianState, GaussianState)> {
    let (forecast, _) = gain_forecast(state, dynamics)?;
    let analysis = fixed_gain_analysis(&forecast, gain, y, obs);
    Ok((forecast, analysis))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_bayes_update() {
        let obs = ObservationModel::identity(1, 1.0).unwrap();
        let f = GaussianState::new(Vector::zeros(1), Matrix::identity(1, 1));
        let (a, k) = kalman_analysis(&f, &Vector::from_element(1, 2.0), &obs).unwrap();
        assert!((a.mean[0] - 1.0).abs() < 1e-15);
        assert!((a.cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scalar_steady_state_with_zero_dynamics() {
        let dynamics = LinearDynamics::new(Matrix::zeros(1, 1), Matrix::from_element(1, 1, 0.3)).unwrap();
        let obs = ObservationModel::new(Matrix::identity(1, 1), Matrix::from_element(1, 1, 0.7)).unwrap();
        let ss = steady_state_kalman(&dynamics, &obs, 1e-14, 100).unwrap();
        assert!((ss.c_hat[(0, 0)] - 0.3).abs() < 1e-15);
        assert!((ss.k[(0, 0)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_leaves_forecast() {
        let obs = ObservationModel::identity(2, 1.0).unwrap();
        let f = GaussianState::new(Vector::from_vec(vec![1.0, 2.0]), Matrix::identity(2, 2) * 3.0);
        let a = fixed_gain_analysis(&f, &GainParams { k: Matrix::zeros(2, 2) }, &Vector::zeros(2), &obs);
        assert_eq!(a, f);
    }

    #[test]
    fn non_convergence_is_reported() {
        let dynamics = LinearDynamics::new(Matrix::identity(1, 1) * 0.99, Matrix::identity(1, 1)).unwrap();
        let obs = ObservationModel::identity(1, 1.0).unwrap();
        assert!(matches!(steady_state_kalman(&dynamics, &obs, 1e-30, 3), Err(Error::NonConvergence { iterations: 3, .. })));
    }
}
