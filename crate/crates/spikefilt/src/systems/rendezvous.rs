//! Clohessy-Wiltshire relative-motion model for the satellite rendezvous
//! scenario: position-only measurements and an externally supplied LQR gain.

use nalgebra::{DMatrix, DVector};

use super::{LtiModel, SystemModel};
use crate::{Error, Result, Scalar};

/// Which CW coefficient layout to build.
///
/// `Paper` reproduces the source system verbatim (velocity-coupled n² terms);
/// `Textbook` is the conventional position-coupled form with `ÿ = −n²y` and
/// `z̈ = −2nẋ + 3n²z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CwVariant {
    Paper,
    Textbook,
}

/// Mean motion `n = sqrt(μ_earth / R_o³)` with `R_o` in km and `μ_earth` in
/// km³/s²; the result is in rad/s.
pub fn mean_motion<T: Scalar>(r_o_km: T, mu_earth: T) -> Result<T> {
    if r_o_km <= T::zero() {
        return Err(Error::Domain("orbital radius must be positive".into()));
    }
    Ok((mu_earth / (r_o_km * r_o_km * r_o_km)).sqrt())
}

/// CW state-space matrices for state `[x, y, z, ẋ, ẏ, ż]` and input
/// `[f_x, f_y, f_z]`.
pub fn cw_matrices<T: Scalar>(n: T, variant: CwVariant) -> (DMatrix<T>, DMatrix<T>) {
    let two = T::from_f64_lit(2.0);
    let three = T::from_f64_lit(3.0);
    let n2 = n * n;

    let mut a = DMatrix::zeros(6, 6);
    a[(0, 3)] = T::one();
    a[(1, 4)] = T::one();
    a[(2, 5)] = T::one();
    a[(3, 5)] = two * n;
    match variant {
        CwVariant::Paper => {
            a[(4, 4)] = -n2;
            a[(5, 3)] = -two * n;
            a[(5, 5)] = two * n2;
        }
        CwVariant::Textbook => {
            a[(4, 1)] = -n2;
            a[(5, 3)] = -two * n;
            a[(5, 2)] = three * n2;
        }
    }

    let mut b = DMatrix::zeros(6, 3);
    for i in 0..3 {
        b[(3 + i, i)] = T::one();
    }
    (a, b)
}

/// `u = −K·x̂`. The gain is an input; it is never synthesized here.
pub fn lqr_control<T: Scalar>(k_ctrl: &DMatrix<T>, x_hat: &DVector<T>) -> Result<DVector<T>> {
    if k_ctrl.ncols() != x_hat.len() {
        return Err(Error::Config(format!(
            "controller gain has {} columns but the state has {} entries",
            k_ctrl.ncols(),
            x_hat.len()
        )));
    }
    Ok(-(k_ctrl * x_hat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RendezvousParams<T: Scalar> {
    /// Mean motion in rad/s.
    pub mean_motion: T,
    /// 3x6 controller gain applied as `u = −K·x`.
    pub k_ctrl: DMatrix<T>,
    pub variant: CwVariant,
}

impl RendezvousParams<f64> {
    /// Parameters at the default 400 km LEO target orbit with the shipped
    /// controller gain (see `configs/rendezvous.cfg` for its provenance).
    pub fn default_gain_params() -> Self {
        let n = mean_motion(6778.137, 398600.0).expect("positive radius");
        Self {
            mean_motion: n,
            k_ctrl: default_k_ctrl(),
            variant: CwVariant::Paper,
        }
    }
}

/// Shipped controller gain: computed once by fixed-point iteration of the
/// control Riccati equation on the paper-variant CW matrices at the default
/// orbit, with state weight diag(1.6e-7·I₃, 0) and input weight I₃ (slow
/// ~0.02 rad/s closed loop so the approach spans the scenario horizon).
pub fn default_k_ctrl() -> DMatrix<f64> {
    let n = mean_motion(6778.137, 398600.0).unwrap();
    let (a, b) = cw_matrices(n, CwVariant::Paper);
    let q = DMatrix::from_partial_diagonal(6, 6, &[1.6e-7, 1.6e-7, 1.6e-7, 0.0, 0.0, 0.0]);
    control_riccati_gain(&a, &b, &q, &DMatrix::identity(3, 3))
        .expect("default CW pair is stabilizable")
}

/// Fixed-point iteration of the continuous control Riccati equation
/// `AᵀP + PA + Q − PBR⁻¹BᵀP = 0`; returns `K = R⁻¹BᵀP`.
///
/// Kept here (not test-only) so the shipped gain's provenance is checkable:
/// the config tests re-derive the gain and compare against the file.
pub fn control_riccati_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix("LQR input weight"))?;
    let mut p = DMatrix::identity(a.nrows(), a.ncols()) * 1e-3;
    let dt = 0.5;
    for _ in 0..4_000_000 {
        let pa = a.transpose() * &p;
        let pdot = &pa + pa.transpose() + q - &p * b * &r_inv * b.transpose() * &p;
        let next = crate::linalg::symmetrize(&(&p + &pdot * dt));
        let delta = (&next - &p).norm();
        p = next;
        if delta < 1e-14 {
            break;
        }
    }
    Ok(&r_inv * b.transpose() * &p)
}

#[derive(Debug, Clone)]
pub struct RendezvousModel<T: Scalar> {
    params: RendezvousParams<T>,
    lti: LtiModel<T>,
}

impl<T: Scalar> RendezvousModel<T> {
    pub fn new(params: RendezvousParams<T>) -> Result<Self> {
        if params.mean_motion < T::zero() || !params.mean_motion.is_finite() {
            return Err(Error::Config("mean motion must be finite and >= 0".into()));
        }
        if params.k_ctrl.shape() != (3, 6) {
            return Err(Error::Config(format!(
                "controller gain must be 3x6, got {}x{}",
                params.k_ctrl.nrows(),
                params.k_ctrl.ncols()
            )));
        }
        if params.k_ctrl.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("controller gain must be finite".into()));
        }
        let (a, b) = cw_matrices(params.mean_motion, params.variant);
        // Position-only measurement: C = [I₃ | 0].
        let mut c = DMatrix::zeros(3, 6);
        for i in 0..3 {
            c[(i, i)] = T::one();
        }
        let lti = LtiModel::new(a, b, c)?;
        Ok(Self { params, lti })
    }

    pub fn params(&self) -> &RendezvousParams<T> {
        &self.params
    }
}

impl<T: Scalar> SystemModel<T> for RendezvousModel<T> {
    fn n_x(&self) -> usize {
        6
    }
    fn n_u(&self) -> usize {
        3
    }
    fn n_z(&self) -> usize {
        3
    }

    fn dynamics(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        self.lti.dynamics(x, u)
    }

    fn measurement(&self, x: &DVector<T>) -> DVector<T> {
        self.lti.measurement(x)
    }

    fn dynamics_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.lti.dynamics_jacobian(x)
    }

    fn input_jacobian(&self, u: &DVector<T>) -> DMatrix<T> {
        self.lti.input_jacobian(u)
    }

    fn measurement_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.lti.measurement_jacobian(x)
    }

    fn is_lti(&self) -> bool {
        true
    }
}
