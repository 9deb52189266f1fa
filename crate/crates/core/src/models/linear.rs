use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::rng::{derive_seed, rng_from_seed};
use crate::{linalg, Error, Matrix, Result};

/// `Ψ(v) = A v` with additive Gaussian process noise `N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: Matrix,
    sigma: Matrix,
}

impl LinearDynamics {
    pub fn new(a: Matrix, sigma: Matrix) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::InvalidModel(format!(
                "A is {}x{}, Σ is {}x{}",
                a.nrows(),
                a.ncols(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        Ok(Self { a, sigma: linalg::sym(&sigma) })
    }

    /// The random benchmark system: a stable symmetric `A` and `Σ = QQᵀ + I/10`.
    pub fn random(dim: usize, seed: u64, noise_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("linear model needs dim >= 1".into()));
        }
        let a = make_stable_random_matrix(dim, derive_seed(seed, &[1]));
        let sigma = make_process_noise(dim, derive_seed(seed, &[2]), noise_scale);
        Self::new(a, sigma)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }
}

/// Symmetrized Gaussian matrix with its spectrum rescaled by `λ_max + 1/10`.
pub fn make_stable_random_matrix(dim: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let w = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let w_sym = (&w + w.transpose()) * 0.5;
    let eig = SymmetricEigen::new(w_sym);
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scaled = eig.eigenvalues.map(|v| v / (lambda_max + 0.1));
    let a = &eig.eigenvectors * DMatrix::from_diagonal(&scaled) * eig.eigenvectors.transpose();
    linalg::sym(&a)
}

/// `Σ = QQᵀ + I/10` with `Q_ij ~ N(0, scale)` (`scale` is a variance).
pub fn make_process_noise(dim: usize, seed: u64, scale: f64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, scale.max(0.0).sqrt()).expect("finite std");
    let q = DMatrix::<f64>::from_fn(dim, dim, |_, _| normal.sample(&mut rng));
    let sigma = &q * q.transpose() + DMatrix::identity(dim, dim) * 0.1;
    linalg::sym(&sigma)
}
