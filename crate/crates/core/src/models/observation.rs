use crate::linalg::{chol_log_det, cholesky, lower_solve_vec};
use crate::{Error, Matrix, Result, Vector};

/// Linear observation `y = Hv + η`, `η ~ N(0, Γ)`.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    h: Matrix,
    gamma: Matrix,
    gamma_inv: Matrix,
    gamma_chol: Matrix,
    log_det_2pi_gamma: f64,
}

impl ObservationModel {
    pub fn new(h: Matrix, gamma: Matrix) -> Result<Self> {
        let p = h.nrows();
        if gamma.nrows() != p || gamma.ncols() != p {
            return Err(Error::InvalidModel(format!("Γ must be {p}×{p} to match H")));
        }
        let chol = cholesky(&gamma, "observation covariance Γ")?;
        let gamma_chol = chol.l();
        let gamma_inv = chol.inverse();
        let log_det_2pi_gamma = p as f64 * (2.0 * std::f64::consts::PI).ln() + chol_log_det(&gamma_chol);
        Ok(Self { h, gamma, gamma_inv, gamma_chol, log_det_2pi_gamma })
    }

    /// `H = I`, `Γ = variance · I`.
    pub fn identity(dim: usize, variance: f64) -> Result<Self> {
        Self::new(Matrix::identity(dim, dim), Matrix::identity(dim, dim) * variance)
    }

    /// Rows of the identity at even indices.
    pub fn every_other(dim: usize, variance: f64) -> Result<Self> {
        let p = dim.div_ceil(2);
        let h = Matrix::from_fn(p, dim, |r, c| if c == 2 * r { 1.0 } else { 0.0 });
        Self::new(h, Matrix::identity(p, p) * variance)
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn gamma_inv(&self) -> &Matrix {
        &self.gamma_inv
    }

    /// Lower Cholesky factor of Γ.
    pub fn gamma_chol(&self) -> &Matrix {
        &self.gamma_chol
    }

    pub fn log_det_2pi_gamma(&self) -> f64 {
        self.log_det_2pi_gamma
    }

    /// `rᵀ Γ⁻¹ r`.
    pub fn mahalanobis(&self, r: &Vector) -> f64 {
        lower_solve_vec(&self.gamma_chol, r).norm_squared()
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.h * v
    }
}
