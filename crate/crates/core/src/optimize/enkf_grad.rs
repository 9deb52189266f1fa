//! Forward sensitivities of the EnKF objective in `(λ, ℓ)`.

use crate::filters::{enkf_analysis, enkf_propagate, EnkfOptions, GaussianState, InflLocParams};
use crate::linalg::{cholesky, sym, SpectralSqrt};
use crate::objective::{
    expected_nll, gaussian_projection_with, initial_state, kl_gaussian, ledoit_wolf_shrink, Belief, FilterFamily,
    FilterState, ObjectiveConfig, ProjectionNorm,
};
use crate::ssm::{StateSpaceModel, TruthRun};
use crate::{Error, Matrix, Result, Vector};

fn sym2(x: &Matrix) -> Matrix {
    x + x.transpose()
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.component_mul(b).sum()
}

fn centered(x: &Matrix) -> Matrix {
    let m = x.column_mean();
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        col -= &m;
    }
    out
}

fn add_to_columns(x: &Matrix, v: &Vector) -> Matrix {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        col += v;
    }
    out
}

/// Cyclic squared distances in the localization kernel.
fn squared_distances(dim: usize, unit: f64) -> Matrix {
    Matrix::from_fn(dim, dim, |i, k| {
        let gap = i.abs_diff(k);
        let dist = gap.min(dim - gap) as f64 * unit;
        dist * dist
    })
}

/// Directional derivative of `KL(N(m₁, C₁) ‖ N(m₂, C₂))`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn kl_tangent(
    g1: &GaussianState,
    g2: &GaussianState,
    c1_inv: &Matrix,
    c2_inv: &Matrix,
    dm1: &Vector,
    dc1: &Matrix,
    dm2: &Vector,
    dc2: &Matrix,
) -> f64 {
    let w = c2_inv * (&g2.mean - &g1.mean);
    0.5 * (inner(c2_inv, dc2) - inner(c1_inv, dc1) + inner(c2_inv, dc1) - inner(&(c2_inv * dc2 * c2_inv), &g1.cov)
        + 2.0 * w.dot(&(dm2 - dm1))
        - w.dot(&(dc2 * &w)))
}

/// Objective at `(λ, ℓ)` and its partial derivatives `(∂/∂λ, ∂/∂ℓ)`.
pub fn enkf_gradient_forward(
    params: &InflLocParams,
    members: usize,
    options: &EnkfOptions,
    model: &StateSpaceModel,
    truth: &TruthRun,
    cfg: &ObjectiveConfig,
) -> Result<(f64, [f64; 2])> {
    cfg.validate()?;
    let family = FilterFamily::Enkf { members, options: *options };
    let FilterState::Ensemble(mut ens) = initial_state(&family, model, cfg)? else {
        unreachable!("EnKF family starts from an ensemble")
    };
    if !model.dynamics.supports_jacobian() {
        return Err(Error::Unsupported(format!("EnKF sensitivities on {} dynamics", model.dynamics.name())));
    }
    let d = model.dim();
    let n = members as f64;
    let obs = &model.obs;
    let h = obs.h();
    let gamma = cfg.shrinkage_gamma;
    let denom = match cfg.projection {
        ProjectionNorm::Unbiased => n - 1.0,
        ProjectionNorm::Mle => n,
    };
    let dist2 = squared_distances(d, options.distance_unit);
    let g = h.transpose() * obs.gamma_inv() * h;
    let mut de = [Matrix::zeros(d, members), Matrix::zeros(d, members)];
    let mut total = 0.0;
    let mut grad = [0.0; 2];

    for (j, y) in truth.observations.iter().enumerate() {
        let step_result = (|| -> Result<()> {
            let propagated = enkf_propagate(&ens, &model.dynamics, options, cfg.seed, j)?;
            let mut dprop = [Matrix::zeros(d, members), Matrix::zeros(d, members)];
            for t in 0..2 {
                if de[t].iter().all(|v| *v == 0.0) {
                    continue;
                }
                for c in 0..members {
                    let (_, du) = model.dynamics.propagate_tangent(&ens.members.column(c).into_owned(), &de[t].column(c).into_owned())?;
                    dprop[t].set_column(c, &du);
                }
            }
            let rec = enkf_analysis(propagated, y, params, model.dynamics.sigma(), obs, options)?;

            let pa = gaussian_projection_with(&rec.analysis, cfg.projection)?;
            let pf = gaussian_projection_with(&rec.forecast, cfg.projection)?;
            let qa = GaussianState::new(pa.mean, ledoit_wolf_shrink(&pa.cov, gamma));
            let qf = GaussianState::new(pf.mean, ledoit_wolf_shrink(&pf.cov, gamma));
            let kl = kl_gaussian(&qa, &qf)?;
            let nll = expected_nll(Belief::Ensemble(&rec.analysis), y, obs, cfg, j)?;
            if !(kl.is_finite() && nll.is_finite()) {
                return Err(Error::Blowup { step: j + 1, context: "objective term became non-finite".into() });
            }
            total += kl + nll;
            let qa_inv = cholesky(&qa.cov, "analysis projection")?.inverse();
            let qf_inv = cholesky(&qf.cov, "forecast projection")?.inverse();

            let l_s = &rec.innovation_chol;
            let solve_s = |b: &Matrix| -> Matrix {
                let w = l_s.solve_lower_triangular(b).expect("positive diagonal");
                l_s.tr_solve_lower_triangular(&w).expect("positive diagonal")
            };
            let contraction = Matrix::identity(d, d) - &rec.gain * h;
            let x = rec.sqrt.matrix();
            let xa = &x * &rec.anomalies;
            let lam = params.lambda;
            let lam_a = rec.analysis_inflation;
            let resid = {
                let mut r = rec.analysis.members.clone();
                for mut col in r.column_iter_mut() {
                    col.copy_from(&(y - h * &col));
                }
                h.transpose() * obs.gamma_inv() * r
            };

            for t in 0..2 {
                let (dlam, dell) = if t == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
                let dm_hat = dprop[t].column_mean();
                let draw = centered(&dprop[t]);
                let da = &rec.raw_anomalies * dlam + draw * lam;
                let dps = sym2(&(&da * rec.anomalies.transpose())) / (n - 1.0);
                let dloc = rec.localization.component_mul(&dist2) * (dell / (params.ell * params.ell));
                let dc_hat = dloc.component_mul(&rec.sample_cov) + rec.localization.component_mul(&dps);
                let dk = solve_s(&(h * &dc_hat * contraction.transpose())).transpose();
                let dm = &dm_hat + &dk * &rec.innovation - &rec.gain * (h * &dm_hat);
                let dmat = -(&dk * h);
                let dx = match rec.sqrt.tangent(&dmat) {
                    Some(dx) => dx,
                    None => {
                        let eps = 1e-6 * (1.0 + rec.c_hat.amax());
                        let plus = SpectralSqrt::posterior_contraction(&sym(&(&rec.c_hat + &dc_hat * eps)), &g)?.matrix();
                        let minus = SpectralSqrt::posterior_contraction(&sym(&(&rec.c_hat - &dc_hat * eps)), &g)?.matrix();
                        (plus - minus) / (2.0 * eps)
                    }
                };
                let dlam_a = if options.single_inflation { 0.0 } else { dlam };
                let de_a = add_to_columns(&(&xa * dlam_a + (&dx * &rec.anomalies + &x * &da) * lam_a), &dm);
                let de_f = add_to_columns(&da, &dm_hat);

                let dca = sym2(&(centered(&de_a) * centered(&rec.analysis.members).transpose())) * ((1.0 - gamma) / denom);
                let dcf = sym2(&(centered(&de_f) * centered(&rec.forecast.members).transpose())) * ((1.0 - gamma) / denom);
                let dkl = kl_tangent(&qa, &qf, &qa_inv, &qf_inv, &de_a.column_mean(), &dca, &de_f.column_mean(), &dcf);
                let dnll = -inner(&resid, &de_a) / n;
                grad[t] += dkl + dnll;
                de[t] = de_a;
            }
            ens = rec.analysis;
            Ok(())
        })();
        if let Err(e) = step_result {
            return Err(Error::ObjectiveFailed { step: j + 1, partial: Box::default(), source: Box::new(e) });
        }
    }
    Ok((total, grad))
}
