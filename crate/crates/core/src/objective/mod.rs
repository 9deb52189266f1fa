//! Variational filtering objectives.
//!
//! Each assimilation step contributes `KL(q_{j+1} ‖ P q_j) + E_{q_{j+1}}[−log p(y_{j+1} | v)]`,
//! the divergence of the analysis from its own forecast plus the expected
//! observation misfit. Ensemble beliefs enter through their Gaussian
//! projection with Ledoit–Wolf shrinkage.

mod run;

pub use run::{
    initial_state, offline_objective, online_objective_step, online_transport_objective_affine, run_filter,
    FilterFamily, FilterParams, FilterRun, FilterState, OnlineStep, StepOutcome,
};

use serde::{Deserialize, Serialize};

use crate::filters::{Ensemble, GaussianState};
use crate::linalg::{chol_log_det, cholesky, psd_factor, sym};
use crate::models::ObservationModel;
use crate::rng::{standard_normal_vec, stream_rng, Stream};
use crate::ssm::obs_log_likelihood;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NllMode {
    MonteCarlo,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlMode {
    GaussianAnalytic,
    ProjectedEnsemble,
}

/// Normalization of the sample covariance in the Gaussian projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionNorm {
    /// `1/(N−1)`
    #[default]
    Unbiased,
    /// `1/N`
    Mle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub mc_samples: usize,
    pub shrinkage_gamma: f64,
    pub nll_mode: NllMode,
    /// `None` picks the mode matching the filter family.
    pub kl_mode: Option<KlMode>,
    pub projection: ProjectionNorm,
    /// Master seed of the Monte Carlo and ensemble-initialization streams.
    pub seed: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            mc_samples: 10,
            shrinkage_gamma: 0.1,
            nll_mode: NllMode::MonteCarlo,
            kl_mode: None,
            projection: ProjectionNorm::Unbiased,
            seed: 0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.shrinkage_gamma) {
            return Err(Error::Config(format!("shrinkage_gamma must lie in [0, 1], got {}", self.shrinkage_gamma)));
        }
        Ok(())
    }
}

/// Cost of one assimilation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub kl: f64,
    pub nll: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub per_step: Vec<StepCost>,
}

impl ObjectiveBreakdown {
    pub fn push(&mut self, cost: StepCost) {
        self.total += cost.kl + cost.nll;
        self.per_step.push(cost);
    }
}

/// `KL(N(m₁, C₁) ‖ N(m₂, C₂))`.
pub fn kl_gaussian(g1: &GaussianState, g2: &GaussianState) -> Result<f64> {
    let d = g1.dim();
    if g2.dim() != d {
        return Err(Error::dim(format!("KL between Gaussians of dimension {d} and {}", g2.dim())));
    }
    let l1 = cholesky(&g1.cov, "first KL argument covariance")?.l();
    let l2 = cholesky(&g2.cov, "second KL argument covariance")?.l();
    let trace = l2.solve_lower_triangular(&l1).expect("positive diagonal").norm_squared();
    let shift = l2.solve_lower_triangular(&(&g2.mean - &g1.mean)).expect("positive diagonal").norm_squared();
    Ok(0.5 * (chol_log_det(&l2) - chol_log_det(&l1) - d as f64 + trace + shift))
}

pub fn gaussian_projection(ens: &Ensemble) -> Result<GaussianState> {
    gaussian_projection_with(ens, ProjectionNorm::Unbiased)
}

pub fn gaussian_projection_with(ens: &Ensemble, norm: ProjectionNorm) -> Result<GaussianState> {
    let n = ens.size();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    let a = ens.anomalies();
    let denom = match norm {
        ProjectionNorm::Unbiased => n as f64 - 1.0,
        ProjectionNorm::Mle => n as f64,
    };
    Ok(GaussianState::new(ens.mean(), &a * a.transpose() / denom))
}

/// `(1−γ) C + γ I`.
pub fn ledoit_wolf_shrink(c: &Matrix, gamma: f64) -> Matrix {
    let d = c.nrows();
    sym(&(c * (1.0 - gamma) + Matrix::identity(d, d) * gamma))
}

/// A belief whose expected negative log-likelihood can be evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Belief<'a> {
    Gaussian(&'a GaussianState),
    Ensemble(&'a Ensemble),
}

/// Standard normal draws for the Monte Carlo likelihood of `step`: one column per sample.
///
/// The draws depend only on `(seed, step)`, never on the parameters being
/// learned, so the Monte Carlo objective is a smooth function of them.
pub fn mc_normals(seed: u64, step: usize, dim: usize, samples: usize) -> Matrix {
    let mut rng = stream_rng(seed, Stream::MonteCarlo, step as u64);
    let mut z = Matrix::zeros(dim, samples);
    for s in 0..samples {
        z.set_column(s, &standard_normal_vec(&mut rng, dim));
    }
    z
}

/// `E[−log p(y | v)]` under the belief; `step` selects the Monte Carlo draws.
pub fn expected_nll(belief: Belief<'_>, y: &Vector, obs: &ObservationModel, cfg: &ObjectiveConfig, step: usize) -> Result<f64> {
    match (belief, cfg.nll_mode) {
        (Belief::Ensemble(ens), NllMode::MonteCarlo) => {
            let mut acc = 0.0;
            for col in ens.members.column_iter() {
                acc -= obs_log_likelihood(y, &col.into_owned(), obs)?;
            }
            Ok(acc / ens.size() as f64)
        }
        (Belief::Ensemble(_), NllMode::Analytic) => {
            Err(Error::Unsupported("analytic expected likelihood for an ensemble belief".into()))
        }
        (Belief::Gaussian(g), NllMode::MonteCarlo) => {
            let factor = psd_factor(&g.cov)?;
            let z = mc_normals(cfg.seed, step, g.dim(), cfg.mc_samples);
            let mut acc = 0.0;
            for col in z.column_iter() {
                let v = &g.mean + &factor * col;
                acc -= obs_log_likelihood(y, &v, obs)?;
            }
            Ok(acc / cfg.mc_samples as f64)
        }
        (Belief::Gaussian(g), NllMode::Analytic) => {
            let h = obs.h();
            let r = y - h * &g.mean;
            let trace = (obs.gamma_inv() * h * &g.cov * h.transpose()).trace();
            Ok(0.5 * obs.mahalanobis(&r) + 0.5 * trace + 0.5 * obs.log_det_2pi_gamma())
        }
    }
}
