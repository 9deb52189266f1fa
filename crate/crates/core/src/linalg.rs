//! Dense linear algebra helpers shared by the filters and the objectives.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Matrix, Result, Vector};

/// Eigenvalues of `I - KH` closer than this to zero from below are clamped.
pub const SQRT_CLAMP_TOL: f64 = 1e-8;
/// Floor on `s_i + s_j` in the square-root tangent; below it the caller falls back.
pub const SQRT_GAP_GUARD: f64 = 1e-8;

pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn sym(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

pub fn cholesky(m: &Matrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition { what: format!("{what} (non-finite entries)") });
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::Decomposition { what: what.to_string() })
}

/// `log det(LLᵀ)` from the lower factor.
pub fn chol_log_det(l: &Matrix) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Lower triangle of `m` with the diagonal halved.
pub fn phi_lower(m: &Matrix) -> Matrix {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => m[(i, j)],
        std::cmp::Ordering::Equal => 0.5 * m[(i, j)],
        std::cmp::Ordering::Less => 0.0,
    })
}

fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    l.solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

fn solve_upper_t(l: &Matrix, b: &Matrix) -> Matrix {
    l.tr_solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

/// Directional derivative of the lower Cholesky factor: `dL = L Φ(L⁻¹ dC L⁻ᵀ)`.
pub fn cholesky_tangent(l: &Matrix, dc: &Matrix) -> Matrix {
    let y = solve_lower(l, dc);
    let x = solve_lower(l, &y.transpose());
    l * phi_lower(&x)
}

/// Reverse-mode Cholesky: maps an adjoint of `L` to the symmetric adjoint of `C`.
pub fn cholesky_adjoint(l: &Matrix, l_bar: &Matrix) -> Matrix {
    let p = phi_lower(&(l.transpose() * l_bar));
    let z = solve_upper_t(l, &p);
    let w = solve_upper_t(l, &z.transpose());
    sym(&w.transpose())
}

/// `L⁻¹ b` for a lower factor.
pub fn lower_solve_vec(l: &Matrix, b: &Vector) -> Vector {
    l.solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

/// A factor `R` with `R Rᵀ = C` for a symmetric positive semidefinite `C`:
/// the Cholesky factor when it exists, else `V diag(√max(μ, 0))`.
pub fn psd_factor(c: &Matrix) -> Result<Matrix> {
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(sym(c));
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&v| !v.is_finite() || v < -1e-10 * scale) {
        return Err(Error::Decomposition { what: "covariance (negative eigenvalue)".into() });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Spectral factorization of the posterior contraction `M = I - KH`,
/// `M = V diag(μ) V⁻¹`, holding `s = √μ` for the principal square root.
#[derive(Debug, Clone)]
pub struct SpectralSqrt {
    basis: Matrix,
    basis_inv: Matrix,
    root: DVector<f64>,
}

impl SpectralSqrt {
    /// Factor `I - KH` with `K = Ĉ Hᵀ (H Ĉ Hᵀ + Γ)⁻¹` through the identity
    /// `I - KH = (I + Ĉ G)⁻¹`, `G = Hᵀ Γ⁻¹ H`.
    ///
    /// With `Ĉ = R Rᵀ`, `R⁻¹ (I - KH) R = (I + Rᵀ G R)⁻¹` is symmetric, so the
    /// eigenvectors of `I - KH` are `R Q` for the orthogonal eigenbasis `Q`. If
    /// `Ĉ` is indefinite but `G = W Wᵀ` is invertible the same construction
    /// runs on `Wᵀ (I + Ĉ G) W⁻ᵀ = I + Wᵀ Ĉ W` instead.
    pub fn posterior_contraction(c_hat: &Matrix, g: &Matrix) -> Result<Self> {
        let d = c_hat.nrows();
        let eye = DMatrix::<f64>::identity(d, d);
        if let Some(chol) = Cholesky::new(c_hat.clone()) {
            let r = chol.l();
            let b = sym(&(&eye + r.transpose() * g * &r));
            let eig = SymmetricEigen::new(b);
            let basis = &r * &eig.eigenvectors;
            let basis_inv = solve_upper_t(&r, &eig.eigenvectors).transpose();
            let root = Self::roots(&eig.eigenvalues)?;
            return Ok(Self { basis, basis_inv, root });
        }
        let w = Cholesky::new(sym(g))
            .ok_or_else(|| Error::FilterDivergence(
                "forecast covariance is indefinite and HᵀΓ⁻¹H is singular".into(),
            ))?
            .l();
        let b = sym(&(&eye + w.transpose() * c_hat * &w));
        let eig = SymmetricEigen::new(b);
        let basis = solve_upper_t(&w, &eig.eigenvectors);
        let basis_inv = eig.eigenvectors.transpose() * w.transpose();
        let root = Self::roots(&eig.eigenvalues)?;
        Ok(Self { basis, basis_inv, root })
    }

    fn roots(b_eigs: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(b_eigs.len());
        for (i, &lam) in b_eigs.iter().enumerate() {
            if lam <= 0.0 {
                return Err(Error::FilterDivergence(format!(
                    "I - KH has a non-positive or unbounded eigenvalue (1/{lam:e})"
                )));
            }
            let mu = 1.0 / lam;
            let mu = if mu < 0.0 && mu > -SQRT_CLAMP_TOL { 0.0 } else { mu };
            if mu < 0.0 {
                return Err(Error::FilterDivergence(format!("I - KH eigenvalue {mu:e}")));
            }
            out[i] = mu.sqrt();
        }
        Ok(out)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.root.map(|s| s * s)
    }

    /// `(I - KH)^{1/2} x`.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = &self.basis_inv * x;
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.root[i];
        }
        &self.basis * y
    }

    pub fn matrix(&self) -> Matrix {
        let d = self.root.len();
        self.apply(&DMatrix::identity(d, d))
    }

    /// Tangent of the square root for a perturbation `dM` of `I - KH`, from the
    /// Sylvester equation `X dX + dX X = dM`. `None` when some `s_i + s_j`
    /// falls below [`SQRT_GAP_GUARD`].
    pub fn tangent(&self, dm: &Matrix) -> Option<Matrix> {
        let d = self.root.len();
        let mut p = &self.basis_inv * dm * &self.basis;
        for i in 0..d {
            for j in 0..d {
                let denom = self.root[i] + self.root[j];
                if denom < SQRT_GAP_GUARD {
                    return None;
                }
                p[(i, j)] /= denom;
            }
        }
        Some(&self.basis * p * &self.basis_inv)
    }
}
