//! Kuramoto–Sivashinsky `u_t + u_xxxx + u_xx + u u_x = 0` on a periodic
//! domain, advanced by ETDRK4 in Fourier space.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Matrix, Result, Vector};

pub const KS_CONTOUR_POINTS: usize = 32;

/// Imaginary residue tolerated after an inverse transform, relative to the
/// state's magnitude.
const REALNESS_TOL: f64 = 1e-10;

/// Per-mode ETDRK4 coefficients, in FFT ordering.
#[derive(Debug, Clone)]
pub struct KsCoefficients {
    pub length: f64,
    pub dim: usize,
    pub dt: f64,
    pub wavenumbers: Vec<f64>,
    /// `k² − k⁴`
    pub symbol: Vec<f64>,
    pub e: Vec<Complex64>,
    pub e2: Vec<Complex64>,
    pub q: Vec<Complex64>,
    pub f1: Vec<Complex64>,
    pub f2: Vec<Complex64>,
    pub f3: Vec<Complex64>,
    /// `−½ i k` with the top third of modes zeroed.
    pub nonlinear: Vec<Complex64>,
}

pub fn ks_precompute(length: f64, dim: usize, dt: f64) -> Result<KsCoefficients> {
    ks_precompute_with(length, dim, dt, KS_CONTOUR_POINTS)
}

pub fn ks_precompute_with(length: f64, dim: usize, dt: f64, contour_points: usize) -> Result<KsCoefficients> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidModel(format!("KS grid size must be even and positive, got {dim}")));
    }
    if !(length > 0.0) || !(dt > 0.0) || contour_points == 0 {
        return Err(Error::InvalidModel("KS needs L > 0, dt > 0 and at least one contour point".into()));
    }
    let half = dim / 2;
    let freq = |j: usize| -> i64 {
        if j < half {
            j as i64
        } else if j == half {
            0
        } else {
            j as i64 - dim as i64
        }
    };
    let wavenumbers: Vec<f64> = (0..dim).map(|j| 2.0 * PI * freq(j) as f64 / length).collect();
    let symbol: Vec<f64> = wavenumbers.iter().map(|k| k * k - k.powi(4)).collect();
    let cutoff = dim as f64 / 3.0;
    let nonlinear = (0..dim)
        .map(|j| {
            let f = freq(j);
            if (f.unsigned_abs() as f64) < cutoff {
                Complex64::new(0.0, -0.5 * wavenumbers[j])
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();

    let roots: Vec<Complex64> = (0..contour_points)
        .map(|j| Complex64::from_polar(1.0, PI * (j as f64 + 0.5) / contour_points as f64))
        .collect();
    let m = contour_points as f64;
    let mut e = Vec::with_capacity(dim);
    let mut e2 = Vec::with_capacity(dim);
    let (mut q, mut f1, mut f2, mut f3) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &s in &symbol {
        let z = s * dt;
        e.push(Complex64::new(z.exp(), 0.0));
        e2.push(Complex64::new((z / 2.0).exp(), 0.0));
        let (mut aq, mut a1, mut a2, mut a3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
        // Conjugate roots make every average real; summing the upper half
        // circle and taking real parts is the same mean over the full circle.
        for &r in &roots {
            let lr = r + z;
            let ez = lr.exp();
            let lr3 = lr * lr * lr;
            aq += ((lr / 2.0).exp() - 1.0) / lr;
            a1 += (-4.0 - lr + ez * (4.0 - 3.0 * lr + lr * lr)) / lr3;
            a2 += (2.0 + lr + ez * (lr - 2.0)) / lr3;
            a3 += (-4.0 - 3.0 * lr - lr * lr + ez * (4.0 - lr)) / lr3;
        }
        q.push(Complex64::new(dt * aq.re / m, 0.0));
        f1.push(Complex64::new(dt * a1.re / m, 0.0));
        f2.push(Complex64::new(dt * a2.re / m, 0.0));
        f3.push(Complex64::new(dt * a3.re / m, 0.0));
    }
    Ok(KsCoefficients { length, dim, dt, wavenumbers, symbol, e, e2, q, f1, f2, f3, nonlinear })
}

#[derive(Clone)]
pub struct KsDynamics {
    coeffs: Arc<KsCoefficients>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    steps_per_obs: usize,
    sigma: Matrix,
}

impl fmt::Debug for KsDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KsDynamics")
            .field("length", &self.coeffs.length)
            .field("dim", &self.coeffs.dim)
            .field("dt", &self.coeffs.dt)
            .field("steps_per_obs", &self.steps_per_obs)
            .finish_non_exhaustive()
    }
}

impl KsDynamics {
    pub fn new(length: f64, dim: usize, dt: f64, steps_per_obs: usize, sigma: Matrix) -> Result<Self> {
        if steps_per_obs == 0 {
            return Err(Error::InvalidModel("steps per observation must be at least 1".into()));
        }
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::InvalidModel("Σ shape does not match D".into()));
        }
        let coeffs = ks_precompute(length, dim, dt)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
            coeffs: Arc::new(coeffs),
            steps_per_obs,
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn coeffs(&self) -> &KsCoefficients {
        &self.coeffs
    }

    pub fn steps_per_obs(&self) -> usize {
        self.steps_per_obs
    }

    /// Grid points `x_i = L i / D`.
    pub fn grid(&self) -> Vector {
        let c = &self.coeffs;
        Vector::from_fn(c.dim, |i, _| c.length * i as f64 / c.dim as f64)
    }

    fn to_spectral(&self, x: &Vector) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the inverse transform and the largest relative imaginary residue.
    fn to_grid(&self, v: &[Complex64]) -> (Vector, f64) {
        let mut buf = v.to_vec();
        self.inverse.process(&mut buf);
        let n = self.coeffs.dim as f64;
        let scale = buf.iter().fold(1.0f64, |m, c| m.max(c.re.abs() / n));
        let residue = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs() / n)) / scale;
        (Vector::from_iterator(buf.len(), buf.iter().map(|c| c.re / n)), residue)
    }

    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut buf = v.to_vec();
        self.inverse.process(&mut buf);
        let n = self.coeffs.dim as f64;
        for c in buf.iter_mut() {
            let u = c.re / n;
            *c = Complex64::new(u * u, 0.0);
        }
        self.forward.process(&mut buf);
        buf.iter().zip(&self.coeffs.nonlinear).map(|(a, g)| a * g).collect()
    }

    fn etdrk4(&self, v: &[Complex64]) -> Vec<Complex64> {
        let c = &self.coeffs;
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..c.dim).map(|j| c.e2[j] * v[j] + c.q[j] * nv[j]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..c.dim).map(|j| c.e2[j] * v[j] + c.q[j] * na[j]).collect();
        let nb = self.nonlinear(&b);
        let cc: Vec<Complex64> = (0..c.dim).map(|j| c.e2[j] * a[j] + c.q[j] * (2.0 * nb[j] - nv[j])).collect();
        let nc = self.nonlinear(&cc);
        (0..c.dim)
            .map(|j| c.e[j] * v[j] + nv[j] * c.f1[j] + 2.0 * (na[j] + nb[j]) * c.f2[j] + nc[j] * c.f3[j])
            .collect()
    }

    fn check(&self, x: &Vector, residue: f64) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { step: 0, context: "KS state became non-finite".into() });
        }
        if residue > REALNESS_TOL {
            return Err(Error::FilterDivergence(format!("KS state lost realness (residue {residue:e})")));
        }
        Ok(())
    }

    /// One ETDRK4 step; also returns the imaginary residue of the inverse transform.
    pub fn ks_step_with_residue(&self, x: &Vector) -> Result<(Vector, f64)> {
        if x.len() != self.coeffs.dim {
            return Err(Error::dim(format!("KS state has length {}, expected {}", x.len(), self.coeffs.dim)));
        }
        let (out, residue) = self.to_grid(&self.etdrk4(&self.to_spectral(x)));
        self.check(&out, residue)?;
        Ok((out, residue))
    }

    pub fn ks_step(&self, x: &Vector) -> Result<Vector> {
        self.ks_step_with_residue(x).map(|(v, _)| v)
    }

    /// `n` ETDRK4 steps. Each step returns to the real grid, which keeps the
    /// unstable low modes free of imaginary rounding residue.
    pub fn advance(&self, x: &Vector, n: usize) -> Result<Vector> {
        let mut u = x.clone();
        for _ in 0..n {
            u = self.ks_step(&u)?;
        }
        if n == 0 && x.len() != self.coeffs.dim {
            return Err(Error::dim(format!("KS state has length {}, expected {}", x.len(), self.coeffs.dim)));
        }
        Ok(u)
    }

    /// Ψ: `steps_per_obs` substeps.
    pub fn propagate(&self, x: &Vector) -> Result<Vector> {
        self.advance(x, self.steps_per_obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mode_coefficients_hit_their_limits() {
        let dt = 0.25;
        let c = ks_precompute(22.0, 64, dt).unwrap();
        assert_eq!(c.symbol[0], 0.0);
        assert_eq!(c.e[0].re, 1.0);
        assert!((c.q[0].re - dt / 2.0).abs() < 1e-10);
        for f in [&c.f1, &c.f2, &c.f3] {
            assert!((f[0].re - dt / 6.0).abs() < 1e-10);
        }
    }

    #[test]
    fn highest_mode_is_dissipative() {
        let c = ks_precompute(22.0, 64, 0.25).unwrap();
        assert!(c.e[31].norm() < 1.0);
        assert!(c.e[33].norm() < 1.0);
    }

    #[test]
    fn contour_average_converges() {
        let a = ks_precompute_with(22.0, 64, 0.25, 32).unwrap();
        let b = ks_precompute_with(22.0, 64, 0.25, 64).unwrap();
        for (x, y) in [(&a.q, &b.q), (&a.f1, &b.f1), (&a.f2, &b.f2), (&a.f3, &b.f3)] {
            for (u, v) in x.iter().zip(y.iter()) {
                assert!((u - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_grid_rejected() {
        assert!(matches!(ks_precompute(22.0, 63, 0.25), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn long_run_stays_real_and_bounded() {
        let m = KsDynamics::new(22.0, 64, 0.25, 5, Matrix::identity(64, 64)).unwrap();
        let tau = 2.0 * PI / 22.0;
        let u0 = m.grid().map(|x| (tau * x).cos() * (1.0 + (tau * x).sin()));
        let u = m.advance(&u0, 2000).unwrap();
        assert!(u.amax() < 5.0);
    }

    #[test]
    fn zero_is_fixed() {
        let m = KsDynamics::new(22.0, 32, 0.25, 5, Matrix::identity(32, 32)).unwrap();
        assert_eq!(m.ks_step(&Vector::zeros(32)).unwrap(), Vector::zeros(32));
    }
}
