//! Exact derivatives of the gain-filter objective.
//!
//! Every step is differentiated as written: the forecast through `Ψ` and its
//! Jacobian, the frozen-gain mean update, the Joseph covariance, the
//! Cholesky-based KL and the reparameterized Monte Carlo likelihood.

use rayon::prelude::*;

use crate::filters::{fixed_gain_analysis, gain_forecast, GainParams, GaussianState};
use crate::linalg::{cholesky, cholesky_adjoint, cholesky_tangent, psd_factor, sym};
use crate::models::{Dynamics, ObservationModel};
use crate::objective::{kl_gaussian, mc_normals, NllMode, ObjectiveConfig, StepCost};
use crate::ssm::{StateSpaceModel, TruthRun};
use crate::{Error, Matrix, Result, Vector};

fn sym2(x: &Matrix) -> Matrix {
    x + x.transpose()
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.component_mul(b).sum()
}

/// Quantities of one step shared by the tangent and reverse sweeps.
pub(crate) struct StepForward {
    prev: GaussianState,
    jac: Matrix,
    c_hat: Matrix,
    c_hat_inv: Matrix,
    contraction: Matrix,
    innovation: Vector,
    l_plus: Matrix,
    c_plus_inv: Matrix,
    c_plus: Matrix,
    delta: Vector,
    /// `HᵀΓ⁻¹(y − H v_s)` per Monte Carlo sample, or for the mean in analytic mode.
    u: Matrix,
    z: Matrix,
    pub(crate) analysis: GaussianState,
    pub(crate) cost: StepCost,
}

impl StepForward {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        prev: &GaussianState,
        forecast: GaussianState,
        jac: Matrix,
        k: &Matrix,
        y: &Vector,
        obs: &ObservationModel,
        cfg: &ObjectiveConfig,
        step: usize,
    ) -> Result<Self> {
        let d = forecast.dim();
        let h = obs.h();
        let analysis = fixed_gain_analysis(&forecast, &GainParams { k: k.clone() }, y, obs);
        let kl = kl_gaussian(&analysis, &forecast)?;
        let c_hat_inv = cholesky(&forecast.cov, "forecast covariance")?.inverse();
        let chol_plus = cholesky(&analysis.cov, "analysis covariance")?;
        let c_plus_inv = chol_plus.inverse();
        let l_plus = chol_plus.l();
        let contraction = Matrix::identity(d, d) - k * h;
        let innovation = y - h * &forecast.mean;
        let delta = &forecast.mean - &analysis.mean;
        let (u, z, nll) = match cfg.nll_mode {
            NllMode::MonteCarlo => {
                let z = mc_normals(cfg.seed, step, d, cfg.mc_samples);
                let factor = psd_factor(&analysis.cov)?;
                let mut u = Matrix::zeros(d, cfg.mc_samples);
                let mut nll = 0.0;
                for s in 0..cfg.mc_samples {
                    let v = &analysis.mean + &factor * z.column(s);
                    let e = y - h * &v;
                    nll += 0.5 * obs.mahalanobis(&e) + 0.5 * obs.log_det_2pi_gamma();
                    u.set_column(s, &(h.transpose() * (obs.gamma_inv() * e)));
                }
                (u, z, nll / cfg.mc_samples as f64)
            }
            NllMode::Analytic => {
                let e = y - h * &analysis.mean;
                let trace = (obs.gamma_inv() * h * &analysis.cov * h.transpose()).trace();
                let nll = 0.5 * obs.mahalanobis(&e) + 0.5 * trace + 0.5 * obs.log_det_2pi_gamma();
                let u = Matrix::from_column_slice(d, 1, (h.transpose() * (obs.gamma_inv() * e)).as_slice());
                (u, Matrix::zeros(d, 0), nll)
            }
        };
        Ok(Self {
            prev: prev.clone(),
            jac,
            c_hat: forecast.cov,
            c_hat_inv,
            contraction,
            innovation,
            l_plus,
            c_plus_inv,
            c_plus: analysis.cov.clone(),
            delta,
            u,
            z,
            analysis,
            cost: StepCost { kl, nll },
        })
    }

    /// Derivative of the step cost and of the analysis for one direction.
    #[allow(clippy::too_many_arguments)]
    fn tangent(
        &self,
        dynamics: &Dynamics,
        k: &Matrix,
        dk: &Matrix,
        dm: &Vector,
        dc: &Matrix,
        obs: &ObservationModel,
        cfg: &ObjectiveConfig,
    ) -> Result<(f64, Vector, Matrix)> {
        let h = obs.h();
        let f = &self.jac;
        let dm_hat = f * dm;
        let mut dc_hat = f * dc * f.transpose();
        if !matches!(dynamics, Dynamics::Linear(_)) && dm.iter().any(|v| *v != 0.0) {
            let df = dynamics.jacobian_tangent(&self.prev.mean, dm)?;
            dc_hat += sym2(&(df * &self.prev.cov * f.transpose()));
        }
        let m = &self.contraction;
        let dmat = -(dk * h);
        let dm_plus = m * &dm_hat + dk * &self.innovation;
        let dc_plus = sym2(&(&dmat * &self.c_hat * m.transpose())) + m * &dc_hat * m.transpose()
            + sym2(&(dk * obs.gamma() * k.transpose()));

        let ci = &self.c_hat_inv;
        let w = ci * &self.delta;
        let dkl = 0.5
            * (inner(ci, &dc_hat) - inner(&self.c_plus_inv, &dc_plus) + inner(ci, &dc_plus)
                - inner(&(ci * &dc_hat * ci), &self.c_plus)
                + 2.0 * w.dot(&(&dm_hat - &dm_plus))
                - w.dot(&(&dc_hat * &w)));
        let dnll = match cfg.nll_mode {
            NllMode::MonteCarlo => {
                let s = cfg.mc_samples as f64;
                let dl = cholesky_tangent(&self.l_plus, &dc_plus);
                let usum = self.u.column_sum();
                -(usum.dot(&dm_plus) + inner(&dl, &(&self.u * self.z.transpose()))) / s
            }
            NllMode::Analytic => {
                let g = h.transpose() * obs.gamma_inv() * h;
                -self.u.column(0).dot(&dm_plus) + 0.5 * inner(&g, &dc_plus)
            }
        };
        Ok((dkl + dnll, dm_plus, dc_plus))
    }

    /// Adjoints of the step cost at its own analysis (no downstream terms).
    fn local_adjoints(&self, obs: &ObservationModel, cfg: &ObjectiveConfig) -> (Vector, Matrix) {
        let ci = &self.c_hat_inv;
        let mut m_bar = -(ci * &self.delta);
        let mut c_bar = (ci - &self.c_plus_inv) * 0.5;
        match cfg.nll_mode {
            NllMode::MonteCarlo => {
                let s = cfg.mc_samples as f64;
                m_bar -= self.u.column_sum() / s;
                let l_bar = -(&self.u * self.z.transpose()) / s;
                c_bar += cholesky_adjoint(&self.l_plus, &l_bar);
            }
            NllMode::Analytic => {
                let h = obs.h();
                m_bar -= self.u.column(0);
                c_bar += h.transpose() * obs.gamma_inv() * h * 0.5;
            }
        }
        (m_bar, c_bar)
    }

    /// Reverse sweep through the step. `m_bar`, `c_bar` are the full adjoints
    /// of the analysis; returns the gain adjoint and, when `dynamics` is
    /// given, the adjoints of the previous analysis.
    fn reverse(
        &self,
        k: &Matrix,
        m_bar: &Vector,
        c_bar: &Matrix,
        obs: &ObservationModel,
        dynamics: Option<&Dynamics>,
    ) -> Result<(Matrix, Option<(Vector, Matrix)>)> {
        let h = obs.h();
        let m = &self.contraction;
        let k_bar = c_bar * (k * obs.gamma() - m * &self.c_hat * h.transpose()) * 2.0 + m_bar * self.innovation.transpose();
        let Some(dynamics) = dynamics else {
            return Ok((k_bar, None));
        };
        let ci = &self.c_hat_inv;
        let w = ci * &self.delta;
        let m_hat_bar = m.transpose() * m_bar + &w;
        let c_hat_bar = sym(&(m.transpose() * c_bar * m + (ci - ci * &self.c_plus * ci - &w * w.transpose()) * 0.5));
        let f = &self.jac;
        let c_prev_bar = sym(&(f.transpose() * &c_hat_bar * f));
        let jac_bar = &c_hat_bar * f * &self.prev.cov * 2.0;
        let m_prev_bar = dynamics.linearization_adjoint(&self.prev.mean, &m_hat_bar, &jac_bar)?;
        Ok((k_bar, Some((m_prev_bar, c_prev_bar))))
    }
}

fn forward_step(
    prev: &GaussianState,
    k: &Matrix,
    y: &Vector,
    model: &StateSpaceModel,
    cfg: &ObjectiveConfig,
    step: usize,
) -> Result<StepForward> {
    let (forecast, jac) = gain_forecast(prev, &model.dynamics)?;
    StepForward::new(prev, forecast, jac, k, y, &model.obs, cfg, step)
}

fn check_gain(k: &Matrix, model: &StateSpaceModel) -> Result<()> {
    if k.nrows() != model.dim() || k.ncols() != model.obs_dim() {
        return Err(Error::Config(format!("gain is {}x{}, model needs {}x{}", k.nrows(), k.ncols(), model.dim(), model.obs_dim())));
    }
    if !model.dynamics.supports_jacobian() {
        return Err(Error::Unsupported(format!("gain derivatives on {} dynamics", model.dynamics.name())));
    }
    Ok(())
}

fn failed(step: usize, e: Error) -> Error {
    Error::ObjectiveFailed { step: step + 1, partial: Box::default(), source: Box::new(e) }
}

/// Objective value and its directional derivatives along each of `directions`.
pub fn gain_objective_tangents(
    k: &Matrix,
    directions: &[Matrix],
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    check_gain(k, model)?;
    cfg.validate()?;
    let d = model.dim();
    let mut state = GaussianState::new(model.m0.clone(), model.c0.clone());
    let mut tangents: Vec<(Vector, Matrix, f64)> = directions.iter().map(|_| (Vector::zeros(d), Matrix::zeros(d, d), 0.0)).collect();
    let mut total = 0.0;
    for (j, y) in truth.observations.iter().enumerate() {
        let sf = forward_step(&state, k, y, model, cfg, j).map_err(|e| failed(j, e))?;
        if !(sf.cost.kl.is_finite() && sf.cost.nll.is_finite()) {
            return Err(failed(j, Error::Blowup { step: j + 1, context: "objective term became non-finite".into() }));
        }
        total += sf.cost.kl + sf.cost.nll;
        tangents
            .par_iter_mut()
            .zip(directions.par_iter())
            .try_for_each(|((dm, dc, acc), dk)| -> Result<()> {
                let (dj, dm_next, dc_next) = sf.tangent(&model.dynamics, k, dk, dm, dc, &model.obs, cfg)?;
                *acc += dj;
                *dm = dm_next;
                *dc = dc_next;
                Ok(())
            })
            .map_err(|e| failed(j, e))?;
        state = sf.analysis;
    }
    Ok((total, tangents.into_iter().map(|t| t.2).collect()))
}

/// Objective and gradient with respect to every gain entry, by forward sensitivities.
pub fn gain_gradient_forward(k: &Matrix, model: &StateSpaceModel, truth: &TruthRun, cfg: &ObjectiveConfig) -> Result<(f64, Matrix)> {
    let (rows, cols) = k.shape();
    let directions: Vec<Matrix> = (0..rows * cols)
        .map(|i| {
            let mut e = Matrix::zeros(rows, cols);
            e[(i % rows, i / rows)] = 1.0;
            e
        })
        .collect();
    let (value, grads) = gain_objective_tangents(k, &directions, model, truth, cfg)?;
    Ok((value, Matrix::from_column_slice(rows, cols, &grads)))
}

/// Objective and gradient by one forward and one reverse sweep.
pub fn gain_gradient_adjoint(k: &Matrix, model: &StateSpaceModel, truth: &TruthRun, cfg: &ObjectiveConfig) -> Result<(f64, Matrix)> {
    check_gain(k, model)?;
    cfg.validate()?;
    let mut state = GaussianState::new(model.m0.clone(), model.c0.clone());
    let mut tape = Vec::with_capacity(truth.horizon());
    let mut total = 0.0;
    for (j, y) in truth.observations.iter().enumerate() {
        let sf = forward_step(&state, k, y, model, cfg, j).map_err(|e| failed(j, e))?;
        if !(sf.cost.kl.is_finite() && sf.cost.nll.is_finite()) {
            return Err(failed(j, Error::Blowup { step: j + 1, context: "objective term became non-finite".into() }));
        }
        total += sf.cost.kl + sf.cost.nll;
        state = sf.analysis.clone();
        tape.push(sf);
    }
    let d = model.dim();
    let mut k_bar = Matrix::zeros(k.nrows(), k.ncols());
    let mut m_bar = Vector::zeros(d);
    let mut c_bar = Matrix::zeros(d, d);
    for (j, sf) in tape.iter().enumerate().rev() {
        let (lm, lc) = sf.local_adjoints(&model.obs, cfg);
        let m_full = &m_bar + lm;
        let c_full = &c_bar + lc;
        let backprop = if j > 0 { Some(&model.dynamics) } else { None };
        let (kb, prev) = sf.reverse(k, &m_full, &c_full, &model.obs, backprop).map_err(|e| failed(j, e))?;
        k_bar += kb;
        if let Some((mb, cb)) = prev {
            m_bar = mb;
            c_bar = cb;
        }
    }
    Ok((total, k_bar))
}

/// Single-step online cost at a fixed forecast and its gradient in the gain.
pub fn gain_step_gradient(
    forecast: &GaussianState,
    k: &Matrix,
    y: &Vector,
    obs: &ObservationModel,
    cfg: &ObjectiveConfig,
    step: usize,
) -> Result<(f64, Matrix)> {
    let d = forecast.dim();
    let sf = StepForward::new(forecast, forecast.clone(), Matrix::identity(d, d), k, y, obs, cfg, step)?;
    let (m_bar, c_bar) = sf.local_adjoints(obs, cfg);
    let (k_bar, _) = sf.reverse(k, &m_bar, &c_bar, obs, None)?;
    Ok((sf.cost.kl + sf.cost.nll, k_bar))
}
