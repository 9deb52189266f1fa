//! Benchmark dynamics, their integrators and the linear observation operator.

mod ks;
mod linear;
mod lorenz96;
mod observation;
mod rk4;

pub use ks::{ks_precompute, ks_precompute_with, KsCoefficients, KsDynamics, KS_CONTOUR_POINTS};
pub use linear::{make_process_noise, make_stable_random_matrix, LinearDynamics};
pub use lorenz96::{l96_vector_field, L96Field, L96Form, Lorenz96Dynamics};
pub use observation::ObservationModel;
pub use rk4::{
    rk4_adjoint, rk4_jacobian, rk4_jacobian_tangent, rk4_jvp, rk4_step, rk4_step_fn, VectorField,
};

use crate::{Error, Matrix, Result, Vector};

/// The forecast map Ψ of a state-space model together with its process noise.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Linear(LinearDynamics),
    Lorenz96(Lorenz96Dynamics),
    Ks(KsDynamics),
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Linear(m) => m.dim(),
            Dynamics::Lorenz96(m) => m.dim(),
            Dynamics::Ks(m) => m.dim(),
        }
    }

    pub fn sigma(&self) -> &Matrix {
        match self {
            Dynamics::Linear(m) => m.sigma(),
            Dynamics::Lorenz96(m) => m.sigma(),
            Dynamics::Ks(m) => m.sigma(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dynamics::Linear(_) => "linear",
            Dynamics::Lorenz96(_) => "l96",
            Dynamics::Ks(_) => "ks",
        }
    }

    /// Ψ(x), one assimilation interval.
    pub fn propagate(&self, x: &Vector) -> Result<Vector> {
        let out = match self {
            Dynamics::Linear(m) => m.a() * x,
            Dynamics::Lorenz96(m) => m.propagate(x),
            Dynamics::Ks(m) => m.propagate(x)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { step: 0, context: format!("{} state became non-finite", self.name()) });
        }
        Ok(out)
    }

    /// Ψ applied to every column.
    pub fn propagate_columns(&self, e: &Matrix) -> Result<Matrix> {
        if let Dynamics::Linear(m) = self {
            return Ok(m.a() * e);
        }
        let mut out = e.clone();
        for (c, col) in e.column_iter().enumerate() {
            out.set_column(c, &self.propagate(&col.into_owned())?);
        }
        Ok(out)
    }

    pub fn supports_jacobian(&self) -> bool {
        !matches!(self, Dynamics::Ks(_))
    }

    /// `(Ψ(x), ∂Ψ/∂x)`.
    pub fn linearize(&self, x: &Vector) -> Result<(Vector, Matrix)> {
        match self {
            Dynamics::Linear(m) => Ok((m.a() * x, m.a().clone())),
            Dynamics::Lorenz96(m) => {
                let (next, jac) = rk4_jacobian(&m.field(), x, m.dt());
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Blowup { step: 0, context: "l96 state became non-finite".into() });
                }
                Ok((next, jac))
            }
            Dynamics::Ks(_) => Err(Error::Unsupported("Jacobian of the Kuramoto–Sivashinsky flow".into())),
        }
    }

    /// Tangent of the Jacobian along `dx`: `d/dε ∂Ψ(x + ε dx)`.
    pub fn jacobian_tangent(&self, x: &Vector, dx: &Vector) -> Result<Matrix> {
        match self {
            Dynamics::Linear(m) => Ok(Matrix::zeros(m.dim(), m.dim())),
            Dynamics::Lorenz96(m) => Ok(rk4_jacobian_tangent(&m.field(), x, m.dt(), dx)),
            Dynamics::Ks(_) => Err(Error::Unsupported("Jacobian of the Kuramoto–Sivashinsky flow".into())),
        }
    }

    /// Adjoint of `x ↦ (Ψ(x), ∂Ψ(x))`: returns `∂Ψᵀ next_bar + ∇ₓ⟨jac_bar, ∂Ψ(x)⟩`.
    pub fn linearization_adjoint(&self, x: &Vector, next_bar: &Vector, jac_bar: &Matrix) -> Result<Vector> {
        match self {
            Dynamics::Linear(m) => Ok(m.a().transpose() * next_bar),
            Dynamics::Lorenz96(m) => Ok(rk4_adjoint(&m.field(), x, m.dt(), next_bar, jac_bar)),
            Dynamics::Ks(_) => Err(Error::Unsupported("Jacobian of the Kuramoto–Sivashinsky flow".into())),
        }
    }

    /// `(Ψ(x), ∂Ψ(x) u)`, without forming the Jacobian.
    pub fn propagate_tangent(&self, x: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        match self {
            Dynamics::Linear(m) => Ok((m.a() * x, m.a() * u)),
            Dynamics::Lorenz96(m) => Ok(rk4_jvp(&m.field(), x, m.dt(), u)),
            Dynamics::Ks(_) => Err(Error::Unsupported("tangent of the Kuramoto–Sivashinsky flow".into())),
        }
    }
}

/// Jacobian of the forecast map at `x`.
pub fn dynamics_jacobian(model: &Dynamics, x: &Vector) -> Result<Matrix> {
    model.linearize(x).map(|(_, j)| j)
}
