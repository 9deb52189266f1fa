//! Kalman, steady-state, fixed-gain and square-root ensemble filters.

mod enkf;
mod kalman;

pub use enkf::{
    enkf_analysis, enkf_propagate, enkf_step, enkf_step_detailed, localization_matrix, localization_matrix_scaled, EnkfOptions, EnkfStepRecord,
    ProcessNoiseMode,
};
pub use kalman::{
    extended_fixed_gain_step, fixed_gain_analysis, fixed_gain_step, gain_forecast, kalman_analysis, kalman_filter,
    kalman_predict, steady_state_kalman, SteadyState,
};

use serde::{Deserialize, Serialize};

use crate::linalg::symmetrize;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianState {
    pub fn new(mean: Vector, mut cov: Matrix) -> Self {
        symmetrize(&mut cov);
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A frozen gain `K` (d×p).
#[derive(Debug, Clone, PartialEq)]
pub struct GainParams {
    pub k: Matrix,
}

/// Inflation `λ` and localization length `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflLocParams {
    pub lambda: f64,
    pub ell: f64,
}

impl InflLocParams {
    pub fn new(lambda: f64, ell: f64) -> Result<Self> {
        if !(ell > 0.0) || !(lambda >= 0.0) {
            return Err(Error::Config(format!("need λ ≥ 0 and ℓ > 0, got λ={lambda}, ℓ={ell}")));
        }
        Ok(Self { lambda, ell })
    }
}

/// Ensemble members as the columns of a d×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Matrix,
}

impl Ensemble {
    pub fn new(members: Matrix) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::DegenerateEnsemble(members.ncols()));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { step: 0, context: "ensemble has non-finite entries".into() });
        }
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn mean(&self) -> Vector {
        self.members.column_mean()
    }

    /// Members minus their mean.
    pub fn anomalies(&self) -> Matrix {
        let m = self.mean();
        let mut a = self.members.clone();
        for mut col in a.column_iter_mut() {
            col -= &m;
        }
        a
    }
}
