//! Classical continuous-time filters: EKF with Riccati covariance
//! propagation and the SIF/MSIF sliding-innovation gain family. The same
//! gain construction feeds the spiking filters in [`crate::neuro`].

use nalgebra::{DMatrix, DVector};

use crate::linalg::{pseudo_inverse, symmetrize};
use crate::systems::{NoiseSpec, SystemModel};
use crate::{Error, Result, Scalar, DIVERGENCE_NORM};

/// Estimate, covariance and time of a running filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T: Scalar> {
    pub x_hat: DVector<T>,
    pub p: DMatrix<T>,
    pub t: T,
}

impl<T: Scalar> FilterState<T> {
    pub fn new(x_hat: DVector<T>, p: DMatrix<T>) -> Self {
        Self {
            x_hat,
            p,
            t: T::zero(),
        }
    }
}

/// How the correction gain is built each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainRule<T: Scalar> {
    /// `K = PCᵀR⁻¹` (EKF).
    Kalman,
    /// `K = C⁺·diag(sat(|z − ẑ|/δ))` (SIF).
    Sif { delta: T },
    /// `K = C⁺·diag(sat(diag(Pzz)/δ))` (MSIF; EMSIF when applied through
    /// the Jacobians of a nonlinear model).
    Msif { delta: T },
}

impl<T: Scalar> GainRule<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            GainRule::Kalman => Ok(()),
            GainRule::Sif { delta } | GainRule::Msif { delta } => {
                if *delta > T::zero() {
                    Ok(())
                } else {
                    Err(Error::Config("sliding boundary layer delta must be > 0".into()))
                }
            }
        }
    }
}

/// Diagnostics from one filter step that the harness rolls into metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    /// The measurement matrix was rank-deficient and a least-squares
    /// pseudo-inverse was used.
    pub rank_warning: bool,
}

/// One Euler step of `Ṗ = AP + PAᵀ + Q − PCᵀR⁻¹CP`, symmetrized.
pub fn riccati_step<T: Scalar>(
    p: &DMatrix<T>,
    a: &DMatrix<T>,
    q_used: &DMatrix<T>,
    c: &DMatrix<T>,
    r_used: &DMatrix<T>,
    dt: T,
) -> Result<DMatrix<T>> {
    if dt <= T::zero() {
        return Err(Error::Domain("dt must be positive".into()));
    }
    let r_inv = r_used
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix("measurement noise covariance"))?;
    let ap = a * p;
    let p_dot = &ap + ap.transpose() + q_used - p * c.transpose() * &r_inv * c * p;
    Ok(symmetrize(&(p + p_dot * dt)))
}

/// `K = PCᵀR⁻¹`.
pub fn ekf_gain<T: Scalar>(
    p: &DMatrix<T>,
    c: &DMatrix<T>,
    r_used: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let r_inv = r_used
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix("measurement noise covariance"))?;
    Ok(p * c.transpose() * r_inv)
}

/// Innovation covariance `Pzz = CPCᵀ + R`.
pub fn innovation_covariance<T: Scalar>(
    p: &DMatrix<T>,
    c: &DMatrix<T>,
    r_used: &DMatrix<T>,
) -> DMatrix<T> {
    c * p * c.transpose() + r_used
}

/// Elementwise `sat(v/δ)`: linear inside the boundary layer, clamped to
/// [−1, 1] outside (inputs from the gain rules are nonnegative, so the
/// result lands in [0, 1]).
pub fn saturate<T: Scalar>(vec: &DVector<T>, delta: T) -> Result<DVector<T>> {
    if delta <= T::zero() {
        return Err(Error::Domain("sliding boundary layer delta must be > 0".into()));
    }
    Ok(vec.map(|v| (v / delta).clamp(-T::one(), T::one())))
}

fn gain_from_saturation<T: Scalar>(
    c: &DMatrix<T>,
    saturated: &DVector<T>,
) -> Result<(DMatrix<T>, bool)> {
    let (c_pinv, rank_deficient) = pseudo_inverse(c)?;
    Ok((c_pinv * DMatrix::from_diagonal(saturated), rank_deficient))
}

/// `K = C⁺·diag(sat(|innovation|/δ))`.
///
/// A rank-deficient `C` is not fatal: the least-squares pseudo-inverse is
/// used and the second return flags the condition for the metrics.
pub fn sif_gain<T: Scalar>(
    c: &DMatrix<T>,
    innovation: &DVector<T>,
    delta: T,
) -> Result<(DMatrix<T>, bool)> {
    let sat = saturate(&innovation.abs(), delta)?;
    gain_from_saturation(c, &sat)
}

/// `K = C⁺·diag(sat(diag(Pzz)/δ))`.
pub fn msif_gain<T: Scalar>(
    c: &DMatrix<T>,
    pzz: &DMatrix<T>,
    delta: T,
) -> Result<(DMatrix<T>, bool)> {
    let sat = saturate(&pzz.diagonal(), delta)?;
    gain_from_saturation(c, &sat)
}

/// One Euler step of the continuous filter against the measurement sampled
/// at `state.t + dt`:
///
/// 1. linearize `A`, `C` at the current estimate;
/// 2. propagate the covariance with [`riccati_step`];
/// 3. build the gain from the propagated covariance per the rule;
/// 4. `x̂ ← x̂ + dt·(f(x̂, u) + K(z − h(x̂)))`.
pub fn filter_step<T: Scalar>(
    state: &FilterState<T>,
    model: &dyn SystemModel<T>,
    u: &DVector<T>,
    z: &DVector<T>,
    rule: &GainRule<T>,
    noise_used: &NoiseSpec<T>,
    dt: T,
) -> Result<(FilterState<T>, StepInfo)> {
    let a = model.dynamics_jacobian(&state.x_hat);
    let c = model.measurement_jacobian(&state.x_hat);
    let p = riccati_step(&state.p, &a, &noise_used.q, &c, &noise_used.r, dt)?;

    let z_hat = model.measurement(&state.x_hat);
    let innovation = z - &z_hat;
    let mut info = StepInfo::default();
    let gain = match rule {
        GainRule::Kalman => ekf_gain(&p, &c, &noise_used.r)?,
        GainRule::Sif { delta } => {
            let (k, warn) = sif_gain(&c, &innovation, *delta)?;
            info.rank_warning = warn;
            k
        }
        GainRule::Msif { delta } => {
            let pzz = innovation_covariance(&p, &c, &noise_used.r);
            let (k, warn) = msif_gain(&c, &pzz, *delta)?;
            info.rank_warning = warn;
            k
        }
    };

    let f = model.dynamics(&state.x_hat, u)?;
    let x_hat = &state.x_hat + (f + &gain * innovation) * dt;
    let norm = x_hat.norm().to_f64();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { step: 0, norm });
    }
    Ok((
        FilterState {
            x_hat,
            p,
            t: state.t + dt,
        },
        info,
    ))
}
