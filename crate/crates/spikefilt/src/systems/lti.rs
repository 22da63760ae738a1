//! Generic linear time-invariant model `ẋ = Ax + Bu`, `z = Cx`.

use nalgebra::{DMatrix, DVector};

use super::SystemModel;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
}

impl<T: Scalar> LtiModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || c.ncols() != a.ncols() {
            return Err(Error::Config(format!(
                "inconsistent LTI shapes: A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }
}

impl<T: Scalar> SystemModel<T> for LtiModel<T> {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }
    fn n_u(&self) -> usize {
        self.b.ncols()
    }
    fn n_z(&self) -> usize {
        self.c.nrows()
    }

    fn dynamics(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("non-finite LTI state".into()));
        }
        Ok(&self.a * x + &self.b * u)
    }

    fn measurement(&self, x: &DVector<T>) -> DVector<T> {
        &self.c * x
    }

    fn dynamics_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }

    fn input_jacobian(&self, _u: &DVector<T>) -> DMatrix<T> {
        self.b.clone()
    }

    fn measurement_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.c.clone()
    }

    fn is_lti(&self) -> bool {
        true
    }
}
