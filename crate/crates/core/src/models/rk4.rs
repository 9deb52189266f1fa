//! Classical fourth-order Runge–Kutta flow map and its first and second
//! derivatives.
//!
//! The derivative routines differentiate the discrete RK4 map itself, stage
//! by stage, so they are exact for Ψ rather than for the continuous flow.

use nalgebra::DMatrix;

use crate::{Matrix, Vector};

/// A vector field with the derivative products the filters need.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
    /// `Df(x) u`
    fn jvp(&self, x: &Vector, u: &Vector) -> Vector;
    /// `Df(x)ᵀ w`
    fn vjp(&self, x: &Vector, w: &Vector) -> Vector;
    /// `D²f(x)[v, u]`
    fn second(&self, x: &Vector, v: &Vector, u: &Vector) -> Vector;
    /// `∇ₓ ⟨w, Df(x) u⟩`
    fn second_vjp(&self, x: &Vector, w: &Vector, u: &Vector) -> Vector;
}

pub fn rk4_step_fn(field: impl Fn(&Vector) -> Vector, x: &Vector, dt: f64) -> Vector {
    let k1 = field(x);
    let k2 = field(&(x + &k1 * (0.5 * dt)));
    let k3 = field(&(x + &k2 * (0.5 * dt)));
    let k4 = field(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

pub fn rk4_step<F: VectorField>(field: &F, x: &Vector, dt: f64) -> Vector {
    rk4_step_fn(|v| field.eval(v), x, dt)
}

/// `(Ψ(x), ∂Ψ(x) u)`.
pub fn rk4_jvp<F: VectorField>(field: &F, x: &Vector, dt: f64, u: &Vector) -> (Vector, Vector) {
    let h = dt;
    let k1 = field.eval(x);
    let t1 = field.jvp(x, u);
    let x2 = x + &k1 * (0.5 * h);
    let u2 = u + &t1 * (0.5 * h);
    let k2 = field.eval(&x2);
    let t2 = field.jvp(&x2, &u2);
    let x3 = x + &k2 * (0.5 * h);
    let u3 = u + &t2 * (0.5 * h);
    let k3 = field.eval(&x3);
    let t3 = field.jvp(&x3, &u3);
    let x4 = x + &k3 * h;
    let u4 = u + &t3 * h;
    let k4 = field.eval(&x4);
    let t4 = field.jvp(&x4, &u4);
    (
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0),
        u + (t1 + t2 * 2.0 + t3 * 2.0 + t4) * (h / 6.0),
    )
}

fn jvp_columns<F: VectorField>(field: &F, x: &Vector, m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        out.set_column(c, &field.jvp(x, &m.column(c).into_owned()));
    }
    out
}

fn vjp_columns<F: VectorField>(field: &F, x: &Vector, m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        out.set_column(c, &field.vjp(x, &m.column(c).into_owned()));
    }
    out
}

fn second_columns<F: VectorField>(field: &F, x: &Vector, v: &Vector, m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        out.set_column(c, &field.second(x, v, &m.column(c).into_owned()));
    }
    out
}

fn second_vjp_columns<F: VectorField>(field: &F, x: &Vector, w: &Matrix, u: &Matrix) -> Vector {
    let mut acc = Vector::zeros(x.len());
    for c in 0..w.ncols() {
        acc += field.second_vjp(x, &w.column(c).into_owned(), &u.column(c).into_owned());
    }
    acc
}

struct Stages {
    x: [Vector; 4],
    // tangent matrices X_i (X_1 = I) and K_i = Df(x_i) X_i
    big_x: [Matrix; 4],
    big_k: [Matrix; 4],
}

fn stages<F: VectorField>(field: &F, x: &Vector, h: f64) -> (Vector, Stages) {
    let d = x.len();
    let eye = DMatrix::<f64>::identity(d, d);
    let k1 = field.eval(x);
    let x2 = x + &k1 * (0.5 * h);
    let k2 = field.eval(&x2);
    let x3 = x + &k2 * (0.5 * h);
    let k3 = field.eval(&x3);
    let x4 = x + &k3 * h;
    let k4 = field.eval(&x4);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

    let kk1 = jvp_columns(field, x, &eye);
    let xx2 = &eye + &kk1 * (0.5 * h);
    let kk2 = jvp_columns(field, &x2, &xx2);
    let xx3 = &eye + &kk2 * (0.5 * h);
    let kk3 = jvp_columns(field, &x3, &xx3);
    let xx4 = &eye + &kk3 * h;
    let kk4 = jvp_columns(field, &x4, &xx4);
    (
        next,
        Stages {
            x: [x.clone(), x2, x3, x4],
            big_x: [eye, xx2, xx3, xx4],
            big_k: [kk1, kk2, kk3, kk4],
        },
    )
}

/// `(Ψ(x), ∂Ψ(x))` by propagating the identity through every stage.
pub fn rk4_jacobian<F: VectorField>(field: &F, x: &Vector, dt: f64) -> (Vector, Matrix) {
    let d = x.len();
    let (next, s) = stages(field, x, dt);
    let [kk1, kk2, kk3, kk4] = &s.big_k;
    let jac = DMatrix::<f64>::identity(d, d) + (kk1 + kk2 * 2.0 + kk3 * 2.0 + kk4) * (dt / 6.0);
    (next, jac)
}

/// `d/dε ∂Ψ(x + ε dx)` at `ε = 0`.
pub fn rk4_jacobian_tangent<F: VectorField>(field: &F, x: &Vector, dt: f64, dx: &Vector) -> Matrix {
    let h = dt;
    let (_, s) = stages(field, x, h);
    let [x1, x2, x3, x4] = &s.x;
    let [xx1, xx2, xx3, xx4] = &s.big_x;

    let dk1 = field.jvp(x1, dx);
    let dkk1 = second_columns(field, x1, dx, xx1);

    let dx2 = dx + &dk1 * (0.5 * h);
    let dxx2 = &dkk1 * (0.5 * h);
    let dk2 = field.jvp(x2, &dx2);
    let dkk2 = second_columns(field, x2, &dx2, xx2) + jvp_columns(field, x2, &dxx2);

    let dx3 = dx + &dk2 * (0.5 * h);
    let dxx3 = &dkk2 * (0.5 * h);
    let dk3 = field.jvp(x3, &dx3);
    let dkk3 = second_columns(field, x3, &dx3, xx3) + jvp_columns(field, x3, &dxx3);

    let dx4 = dx + &dk3 * h;
    let dxx4 = &dkk3 * h;
    let dkk4 = second_columns(field, x4, &dx4, xx4) + jvp_columns(field, x4, &dxx4);

    (dkk1 + dkk2 * 2.0 + dkk3 * 2.0 + dkk4) * (h / 6.0)
}

/// Reverse mode through `x ↦ (Ψ(x), ∂Ψ(x))`.
pub fn rk4_adjoint<F: VectorField>(field: &F, x: &Vector, dt: f64, next_bar: &Vector, jac_bar: &Matrix) -> Vector {
    let h = dt;
    let (_, s) = stages(field, x, h);
    let [x1, x2, x3, x4] = &s.x;
    let [xx1, xx2, xx3, xx4] = &s.big_x;

    // Jacobian structure.
    let mut kb1 = jac_bar * (h / 6.0);
    let mut kb2 = jac_bar * (h / 3.0);
    let mut kb3 = jac_bar * (h / 3.0);
    let kb4 = jac_bar * (h / 6.0);

    let mut xb4 = second_vjp_columns(field, x4, &kb4, xx4);
    let xxb4 = vjp_columns(field, x4, &kb4);
    kb3 += &xxb4 * h;

    let mut xb3 = second_vjp_columns(field, x3, &kb3, xx3);
    let xxb3 = vjp_columns(field, x3, &kb3);
    kb2 += &xxb3 * (0.5 * h);

    let mut xb2 = second_vjp_columns(field, x2, &kb2, xx2);
    let xxb2 = vjp_columns(field, x2, &kb2);
    kb1 += &xxb2 * (0.5 * h);

    let mut xb1 = second_vjp_columns(field, x1, &kb1, xx1);

    // State chain.
    let mut xb = next_bar.clone();
    let kbar1 = next_bar * (h / 6.0);
    let mut kbar2 = next_bar * (h / 3.0);
    let mut kbar3 = next_bar * (h / 3.0);
    let kbar4 = next_bar * (h / 6.0);

    xb4 += field.vjp(x4, &kbar4);
    xb += &xb4;
    kbar3 += &xb4 * h;
    xb3 += field.vjp(x3, &kbar3);
    xb += &xb3;
    kbar2 += &xb3 * (0.5 * h);
    xb2 += field.vjp(x2, &kbar2);
    xb += &xb2;
    let kbar1 = kbar1 + &xb2 * (0.5 * h);
    xb1 += field.vjp(x1, &kbar1);
    xb += &xb1;
    xb
}
