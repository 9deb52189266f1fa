use serde::{Deserialize, Serialize};

use super::rk4::{rk4_step, VectorField};
use crate::{Error, Matrix, Result, Vector};

/// Sign convention of the quadratic advection term.
///
/// `Paper` is `dxᵢ/dt = −x_{i−1}(x_{i−2} + x_{i+1}) − xᵢ + F`; `Standard` is
/// the usual `x_{i−1}(x_{i+1} − x_{i−2}) − xᵢ + F`. The first form is not
/// energy-conserving and trajectories started near `F·1` leave to −∞ within
/// a few time units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L96Form {
    Paper,
    Standard,
}

/// Lorenz '96 tendency: quadratic term `c₁ x_{i−1}x_{i+1} + c₂ x_{i−1}x_{i−2}`.
#[derive(Debug, Clone, Copy)]
pub struct L96Field {
    dim: usize,
    forcing: f64,
    c1: f64,
    c2: f64,
}

impl L96Field {
    pub fn new(dim: usize, forcing: f64, form: L96Form) -> Result<Self> {
        if dim < 4 {
            return Err(Error::InvalidModel(format!("Lorenz '96 needs D >= 4, got {dim}")));
        }
        let (c1, c2) = match form {
            L96Form::Paper => (-1.0, -1.0),
            L96Form::Standard => (1.0, -1.0),
        };
        Ok(Self { dim, forcing, c1, c2 })
    }

    #[inline]
    fn idx(&self, i: usize, off: isize) -> usize {
        (i as isize + off).rem_euclid(self.dim as isize) as usize
    }

    fn bilinear_sym(&self, v: &Vector, u: &Vector) -> Vector {
        Vector::from_fn(self.dim, |i, _| {
            let (m1, p1, m2) = (self.idx(i, -1), self.idx(i, 1), self.idx(i, -2));
            self.c1 * (v[m1] * u[p1] + u[m1] * v[p1]) + self.c2 * (v[m1] * u[m2] + u[m1] * v[m2])
        })
    }

    fn bilinear_sym_vjp(&self, w: &Vector, u: &Vector) -> Vector {
        Vector::from_fn(self.dim, |k, _| {
            let (p1, p2, m1, m2) = (self.idx(k, 1), self.idx(k, 2), self.idx(k, -1), self.idx(k, -2));
            self.c1 * (w[p1] * u[p2] + w[m1] * u[m2]) + self.c2 * (w[p1] * u[m1] + w[p2] * u[p1])
        })
    }
}

impl VectorField for L96Field {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.dim, |i, _| {
            let (m1, p1, m2) = (self.idx(i, -1), self.idx(i, 1), self.idx(i, -2));
            self.c1 * x[m1] * x[p1] + self.c2 * x[m1] * x[m2] - x[i] + self.forcing
        })
    }

    fn jvp(&self, x: &Vector, u: &Vector) -> Vector {
        self.bilinear_sym(x, u) - u
    }

    fn vjp(&self, x: &Vector, w: &Vector) -> Vector {
        self.bilinear_sym_vjp(w, x) - w
    }

    fn second(&self, _x: &Vector, v: &Vector, u: &Vector) -> Vector {
        self.bilinear_sym(v, u)
    }

    fn second_vjp(&self, _x: &Vector, w: &Vector, u: &Vector) -> Vector {
        self.bilinear_sym_vjp(w, u)
    }
}

/// `dxᵢ/dt = −x_{i−1}(x_{i−2} + x_{i+1}) − xᵢ + F` with cyclic indices.
pub fn l96_vector_field(x: &Vector, forcing: f64) -> Result<Vector> {
    Ok(L96Field::new(x.len(), forcing, L96Form::Paper)?.eval(x))
}

#[derive(Debug, Clone)]
pub struct Lorenz96Dynamics {
    field: L96Field,
    dt: f64,
    sigma: Matrix,
}

impl Lorenz96Dynamics {
    pub fn new(dim: usize, forcing: f64, dt: f64, sigma: Matrix, form: L96Form) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidModel(format!("integrator step must be positive, got {dt}")));
        }
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::InvalidModel("Σ shape does not match D".into()));
        }
        Ok(Self { field: L96Field::new(dim, forcing, form)?, dt, sigma })
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn forcing(&self) -> f64 {
        self.field.forcing
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn field(&self) -> L96Field {
        self.field
    }

    pub fn propagate(&self, x: &Vector) -> Vector {
        rk4_step(&self.field, x, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::rk4::{rk4_adjoint, rk4_jacobian, rk4_jacobian_tangent, rk4_jvp};
    use crate::rng::{rng_from_seed, standard_normal_vec};
    use approx::assert_relative_eq;

    fn shift(x: &Vector, s: usize) -> Vector {
        let d = x.len();
        Vector::from_fn(d, |i, _| x[(i + d - s) % d])
    }

    #[test]
    fn zero_state_gives_forcing() {
        let f = l96_vector_field(&Vector::zeros(6), 8.0).unwrap();
        assert!(f.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn constant_state_gives_minus_two_f_squared() {
        let f = l96_vector_field(&Vector::from_element(7, 8.0), 8.0).unwrap();
        assert!(f.iter().all(|&v| (v + 128.0).abs() < 1e-12));
    }

    #[test]
    fn unit_vector_matches_index_expansion() {
        let d = 5;
        let mut x = Vector::zeros(d);
        x[0] = 1.0;
        let f = l96_vector_field(&x, 0.0).unwrap();
        for i in 0..d {
            let at = |k: isize| x[(i as isize + k).rem_euclid(d as isize) as usize];
            let expect = -at(-1) * (at(-2) + at(1)) - at(0);
            assert_eq!(f[i], expect);
        }
    }

    #[test]
    fn too_small_dimension_rejected() {
        assert!(matches!(l96_vector_field(&Vector::zeros(3), 8.0), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn field_commutes_with_cyclic_shift() {
        let mut rng = rng_from_seed(4);
        for form in [L96Form::Paper, L96Form::Standard] {
            let f = L96Field::new(9, 8.0, form).unwrap();
            let x = standard_normal_vec(&mut rng, 9) * 3.0;
            for s in 1..4 {
                let lhs = f.eval(&shift(&x, s));
                let rhs = shift(&f.eval(&x), s);
                assert!((lhs - rhs).amax() < 1e-12);
            }
        }
    }

    fn fd_check<G: Fn(&Vector) -> Vector>(g: G, x: &Vector, u: &Vector, an: &Vector, tol: f64) {
        let h = 1e-6;
        let fd = (g(&(x + u * h)) - g(&(x - u * h))) / (2.0 * h);
        let scale = 1.0 + fd.amax();
        assert!((fd - an).amax() / scale < tol, "fd mismatch");
    }

    #[test]
    fn field_derivatives_match_finite_differences() {
        let mut rng = rng_from_seed(5);
        for form in [L96Form::Paper, L96Form::Standard] {
            let f = L96Field::new(8, 8.0, form).unwrap();
            let x = standard_normal_vec(&mut rng, 8) * 2.0;
            let u = standard_normal_vec(&mut rng, 8);
            let w = standard_normal_vec(&mut rng, 8);
            let v = standard_normal_vec(&mut rng, 8);
            fd_check(|y| f.eval(y), &x, &u, &f.jvp(&x, &u), 1e-8);
            // ⟨w, Df u⟩ = ⟨Dfᵀ w, u⟩
            assert_relative_eq!(w.dot(&f.jvp(&x, &u)), f.vjp(&x, &w).dot(&u), epsilon = 1e-10);
            fd_check(|y| f.jvp(y, &u), &x, &v, &f.second(&x, &v, &u), 1e-8);
            let g = |y: &Vector| Vector::from_element(1, w.dot(&f.jvp(y, &u)));
            let an = Vector::from_element(1, f.second_vjp(&x, &w, &u).dot(&v));
            fd_check(g, &x, &v, &an, 1e-8);
        }
    }

    #[test]
    fn rk4_jacobian_and_tangents_match_finite_differences() {
        let mut rng = rng_from_seed(6);
        let f = L96Field::new(10, 8.0, L96Form::Standard).unwrap();
        let dt = 0.05;
        for _ in 0..10 {
            let x = standard_normal_vec(&mut rng, 10) * 3.0 + Vector::from_element(10, 2.0);
            let u = standard_normal_vec(&mut rng, 10);
            let (_, jac) = rk4_jacobian(&f, &x, dt);
            fd_check(|y| rk4_step(&f, y, dt), &x, &u, &(&jac * &u), 1e-7);
            let (_, ju) = rk4_jvp(&f, &x, dt, &u);
            assert!((&jac * &u - ju).amax() < 1e-12);

            let h = 1e-6;
            let fd = (rk4_jacobian(&f, &(&x + &u * h), dt).1 - rk4_jacobian(&f, &(&x - &u * h), dt).1)
                / (2.0 * h);
            let dj = rk4_jacobian_tangent(&f, &x, dt, &u);
            assert!((fd - &dj).amax() < 1e-6);

            let jbar = Matrix::from_fn(10, 10, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
            let nbar = standard_normal_vec(&mut rng, 10);
            let xbar = rk4_adjoint(&f, &x, dt, &nbar, &jbar);
            let tangent_pairing = nbar.dot(&(&jac * &u)) + jbar.component_mul(&dj).sum();
            assert_relative_eq!(xbar.dot(&u), tangent_pairing, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn jacobian_is_shift_equivariant() {
        let mut rng = rng_from_seed(8);
        let f = L96Field::new(12, 8.0, L96Form::Standard).unwrap();
        let x = standard_normal_vec(&mut rng, 12) * 3.0;
        let (_, j0) = rk4_jacobian(&f, &x, 0.05);
        let (_, j1) = rk4_jacobian(&f, &shift(&x, 1), 0.05);
        for i in 0..12 {
            for k in 0..12 {
                assert!((j1[((i + 1) % 12, (k + 1) % 12)] - j0[(i, k)]).abs() < 1e-12);
            }
        }
    }
}
