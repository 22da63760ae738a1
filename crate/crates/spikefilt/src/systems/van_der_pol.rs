//! Van der Pol oscillator with position-only measurement.

use nalgebra::{DMatrix, DVector};

use super::SystemModel;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanDerPolParams<T: Scalar> {
    /// Damping parameter μ.
    pub mu: T,
}

/// `ẋ₁ = x₂`, `ẋ₂ = μ(1 − x₁²)x₂ − x₁`, measuring `x₁`.
///
/// The input channel exists (n_u = 1) but the dynamics ignore it, so the
/// input Jacobian is the zero column.
pub fn vdp_dynamics<T: Scalar>(x: &DVector<T>, mu: T) -> Result<DVector<T>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState("non-finite Van der Pol state".into()));
    }
    let x1 = x[0];
    let x2 = x[1];
    Ok(DVector::from_vec(vec![x2, mu * (T::one() - x1 * x1) * x2 - x1]))
}

pub fn vdp_jacobian<T: Scalar>(x: &DVector<T>, mu: T) -> DMatrix<T> {
    let x1 = x[0];
    let x2 = x[1];
    let two = T::from_f64_lit(2.0);
    DMatrix::from_row_slice(
        2,
        2,
        &[
            T::zero(),
            T::one(),
            -(two * mu * x1 * x2 + T::one()),
            mu * (T::one() - x1 * x1),
        ],
    )
}

#[derive(Debug, Clone)]
pub struct VanDerPolModel<T: Scalar> {
    params: VanDerPolParams<T>,
}

impl<T: Scalar> VanDerPolModel<T> {
    pub fn new(params: VanDerPolParams<T>) -> Result<Self> {
        if !params.mu.is_finite() {
            return Err(Error::Config("Van der Pol mu must be finite".into()));
        }
        Ok(Self { params })
    }

    pub fn mu(&self) -> T {
        self.params.mu
    }
}

impl<T: Scalar> SystemModel<T> for VanDerPolModel<T> {
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_z(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<T>, _u: &DVector<T>) -> Result<DVector<T>> {
        vdp_dynamics(x, self.params.mu)
    }

    fn measurement(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_vec(vec![x[0]])
    }

    fn dynamics_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        vdp_jacobian(x, self.params.mu)
    }

    fn input_jacobian(&self, _u: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(2, 1)
    }

    fn measurement_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_row_slice(1, 2, &[T::one(), T::zero()])
    }
}
