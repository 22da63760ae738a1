//! Dynamical-system models and ground-truth trajectory simulation.

mod lti;
mod rendezvous;
mod van_der_pol;

pub use lti::LtiModel;
pub use rendezvous::{
    control_riccati_gain, cw_matrices, default_k_ctrl, lqr_control, mean_motion, CwVariant,
    RendezvousModel, RendezvousParams,
};
pub use van_der_pol::{vdp_dynamics, vdp_jacobian, VanDerPolModel, VanDerPolParams};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{finite_difference_jacobian, psd_sqrt, relative_matrix_error};
use crate::{Error, Result, Scalar, DIVERGENCE_NORM};

/// Continuous-time system `ẋ = f(x,u) + w`, `z = h(x) + v`, with the
/// Jacobians the filters linearize against.
pub trait SystemModel<T: Scalar>: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_z(&self) -> usize;

    /// State derivative `f(x, u)`. Fails on non-finite input.
    fn dynamics(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>>;

    /// Measurement function `h(x)`.
    fn measurement(&self, x: &DVector<T>) -> DVector<T>;

    /// `A(x) = ∂f/∂x`.
    fn dynamics_jacobian(&self, x: &DVector<T>) -> DMatrix<T>;

    /// `B = ∂f/∂u` at the given input point.
    fn input_jacobian(&self, u: &DVector<T>) -> DMatrix<T>;

    /// `C(x) = ∂h/∂x`.
    fn measurement_jacobian(&self, x: &DVector<T>) -> DMatrix<T>;

    /// True when `A`, `B`, `C` do not depend on the linearization point;
    /// network weight construction caches the static weights in that case.
    fn is_lti(&self) -> bool {
        false
    }
}

/// Process and measurement noise description.
///
/// `q` is a continuous intensity: the sampled per-step increment has
/// covariance `q·dt`. `r` is the per-sample measurement covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(Error::Config("noise covariances must be square".into()));
        }
        let sym_tol = T::from_f64_lit(1e-10);
        if (&q - q.transpose()).norm() > sym_tol || (&r - r.transpose()).norm() > sym_tol {
            return Err(Error::Config("noise covariances must be symmetric".into()));
        }
        if crate::linalg::min_eigenvalue(&q) < -T::from_f64_lit(1e-12) {
            return Err(Error::Config("process noise Q must be positive semidefinite".into()));
        }
        if crate::linalg::min_eigenvalue(&r) <= T::zero() {
            return Err(Error::Config("measurement noise R must be positive definite".into()));
        }
        Ok(Self { q, r })
    }

    /// Mismatched copy used by filters: `α_Q·Q`, `α_R·R`.
    pub fn scaled(&self, alpha_q: T, alpha_r: T) -> Self {
        Self {
            q: &self.q * alpha_q,
            r: &self.r * alpha_r,
        }
    }
}

/// A simulated ground-truth run: uniformly sampled states, the inputs
/// applied, and the noisy measurements the filters will consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub dt: T,
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    pub measurements: Vec<DVector<T>>,
    pub seed: u64,
}

impl<T: Scalar> Trajectory<T> {
    /// Number of integration steps (`len() - 1` samples follow the initial one).
    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }
}

fn sample_normal_vec<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> DVector<T> {
    DVector::from_iterator(n, (0..n).map(|_| T::from_f64_lit(rng.sample::<f64, _>(StandardNormal))))
}

/// Euler-Maruyama simulation of the true system.
///
/// `x_{k+1} = x_k + f(x_k, u_k)·dt + w_k` with `w_k ~ N(0, Q·dt)`, and
/// `z_k = h(x_k) + v_k` with `v_k ~ N(0, R)` at every sample. When a
/// controller gain is supplied the input is `u_k = −K·x_k`; the applied
/// inputs are recorded so filters replay the same sequence. Deterministic
/// given the seed: per step the process increment is drawn first, then the
/// next sample's measurement noise.
pub fn simulate_truth<T: Scalar>(
    model: &dyn SystemModel<T>,
    x0: &DVector<T>,
    controller: Option<&DMatrix<T>>,
    noise: &NoiseSpec<T>,
    dt: T,
    t_end: T,
    seed: u64,
) -> Result<Trajectory<T>> {
    if dt <= T::zero() {
        return Err(Error::Domain("dt must be positive".into()));
    }
    if t_end < dt {
        return Err(Error::Domain("horizon must cover at least one step".into()));
    }
    if let Some(k) = controller {
        if k.ncols() != model.n_x() || k.nrows() != model.n_u() {
            return Err(Error::Config(format!(
                "controller gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                model.n_u(),
                model.n_x()
            )));
        }
    }

    let steps = (t_end.to_f64() / dt.to_f64()).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let q_sqrt = psd_sqrt(&noise.q)?;
    let r_sqrt = psd_sqrt(&noise.r)?;

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut measurements = Vec::with_capacity(steps + 1);

    let mut x = x0.clone();
    let measure = |x: &DVector<T>, rng: &mut ChaCha8Rng, model: &dyn SystemModel<T>| {
        model.measurement(x) + &r_sqrt * sample_normal_vec::<T>(rng, model.n_z())
    };

    times.push(T::zero());
    states.push(x.clone());
    measurements.push(measure(&x, &mut rng, model));

    for k in 0..steps {
        let u = match controller {
            Some(gain) => lqr_control(gain, &x)?,
            None => DVector::zeros(model.n_u()),
        };
        let f = model.dynamics(&x, &u).map_err(|e| e.at_step(k))?;
        let w = (&q_sqrt * sample_normal_vec::<T>(&mut rng, model.n_x())) * sqrt_dt;
        x = &x + f * dt + w;
        let norm = x.norm().to_f64();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step: k + 1, norm });
        }
        inputs.push(u);
        times.push(dt * T::from_usize(k + 1).unwrap());
        states.push(x.clone());
        measurements.push(measure(&x, &mut rng, model));
    }
    // Input at the final sample is never applied; store a zero so all
    // sequences share a length.
    inputs.push(DVector::zeros(model.n_u()));

    Ok(Trajectory {
        dt,
        times,
        states,
        inputs,
        measurements,
        seed,
    })
}

/// Check the analytic Jacobians of a model against central finite
/// differences at `n_points` pseudo-random states. Used both by the test
/// suite and by the CLI `validate` verb.
pub fn validate_jacobians<T: Scalar>(
    model: &dyn SystemModel<T>,
    n_points: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = T::from_f64_lit(1e-6);
    let tol = T::from_f64_lit(1e-5);
    for i in 0..n_points {
        let x = sample_normal_vec::<T>(&mut rng, model.n_x()) * T::from_f64_lit(2.0);
        let u = sample_normal_vec::<T>(&mut rng, model.n_u());

        let a = model.dynamics_jacobian(&x);
        let a_fd = finite_difference_jacobian(
            |p| model.dynamics(p, &u).expect("finite probe state"),
            &x,
            model.n_x(),
            h,
        );
        if relative_matrix_error(&a, &a_fd) >= tol {
            return Err(Error::InvalidState(format!(
                "dynamics Jacobian mismatch at probe {i}"
            )));
        }

        let b = model.input_jacobian(&u);
        let x_for_b = x.clone();
        let b_fd = finite_difference_jacobian(
            |p| model.dynamics(&x_for_b, p).expect("finite probe input"),
            &u,
            model.n_x(),
            h,
        );
        if relative_matrix_error(&b, &b_fd) >= tol {
            return Err(Error::InvalidState(format!(
                "input Jacobian mismatch at probe {i}"
            )));
        }

        let c = model.measurement_jacobian(&x);
        let c_fd = finite_difference_jacobian(|p| model.measurement(p), &x, model.n_z(), h);
        if relative_matrix_error(&c, &c_fd) >= tol {
            return Err(Error::InvalidState(format!(
                "measurement Jacobian mismatch at probe {i}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn harmonic() -> VanDerPolModel<f64> {
        VanDerPolModel::new(VanDerPolParams { mu: 0.0 }).unwrap()
    }

    fn zero_noise(n_x: usize, n_z: usize) -> NoiseSpec<f64> {
        // NoiseSpec::new rejects a singular R; tests that need exactly-zero
        // noise build the struct directly.
        NoiseSpec {
            q: Matrix64::zeros(n_x, n_x),
            r: Matrix64::zeros(n_z, n_z),
        }
    }

    use crate::Matrix64;

    #[test]
    fn noiseless_harmonic_tracks_closed_form() {
        let model = harmonic();
        let x0 = nalgebra::DVector::from_vec(vec![1.0, 0.0]);
        let noise = zero_noise(2, 1);
        let dt = 1e-3;
        let traj = simulate_truth(&model, &x0, None, &noise, dt, 1.0, 7).unwrap();
        assert_eq!(traj.states.len(), 1001);
        let t: f64 = 1.0;
        // Euler on the harmonic oscillator has O(dt) global error.
        assert!((traj.states[1000][0] - t.cos()).abs() < 10.0 * dt);
        assert!((traj.states[1000][1] + t.sin()).abs() < 10.0 * dt);
    }

    #[test]
    fn noiseless_measurements_equal_h() {
        let model = harmonic();
        let x0 = nalgebra::DVector::from_vec(vec![0.3, -0.2]);
        let traj = simulate_truth(&model, &x0, None, &zero_noise(2, 1), 0.01, 0.5, 3).unwrap();
        for (x, z) in traj.states.iter().zip(&traj.measurements) {
            assert_relative_eq!(z[0], x[0], epsilon = 0.0);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let model = VanDerPolModel::new(VanDerPolParams { mu: 0.005 }).unwrap();
        let x0 = nalgebra::DVector::from_vec(vec![2.0, 2.0]);
        let noise = NoiseSpec::new(Matrix64::identity(2, 2) * 0.01, Matrix64::identity(1, 1) * 0.1).unwrap();
        let a = simulate_truth(&model, &x0, None, &noise, 0.01, 2.0, 99).unwrap();
        let b = simulate_truth(&model, &x0, None, &noise, 0.01, 2.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_error_names_step() {
        // ẋ = x² blows up in finite time.
        struct Blowup;
        impl SystemModel<f64> for Blowup {
            fn n_x(&self) -> usize {
                1
            }
            fn n_u(&self) -> usize {
                0
            }
            fn n_z(&self) -> usize {
                1
            }
            fn dynamics(&self, x: &Vector64, _u: &Vector64) -> Result<Vector64> {
                Ok(Vector64::from_vec(vec![x[0] * x[0]]))
            }
            fn measurement(&self, x: &Vector64) -> Vector64 {
                x.clone()
            }
            fn dynamics_jacobian(&self, x: &Vector64) -> Matrix64 {
                Matrix64::from_element(1, 1, 2.0 * x[0])
            }
            fn input_jacobian(&self, _u: &Vector64) -> Matrix64 {
                Matrix64::zeros(1, 0)
            }
            fn measurement_jacobian(&self, _x: &Vector64) -> Matrix64 {
                Matrix64::identity(1, 1)
            }
        }
        use crate::Vector64;
        let x0 = Vector64::from_vec(vec![1.0]);
        let err = simulate_truth(&Blowup, &x0, None, &zero_noise(1, 1), 0.5, 50.0, 1).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step > 0),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn jacobian_validation_passes_for_shipped_models() {
        let vdp = VanDerPolModel::new(VanDerPolParams { mu: 0.005 }).unwrap();
        validate_jacobians(&vdp, 100, 11).unwrap();

        let params = RendezvousParams::default_gain_params();
        let rdv = RendezvousModel::new(params).unwrap();
        validate_jacobians(&rdv, 100, 12).unwrap();
    }

    #[test]
    fn cw_zero_mean_motion_preserves_velocity() {
        let mut params = RendezvousParams::default_gain_params();
        params.mean_motion = 0.0;
        let model = RendezvousModel::new(params).unwrap();
        let x0 = nalgebra::DVector::from_vec(vec![10.0, 5.0, -2.0, 0.3, -0.1, 0.2]);
        let traj = simulate_truth(&model, &x0, None, &zero_noise(6, 3), 0.1, 5.0, 5).unwrap();
        let last = traj.states.last().unwrap();
        for i in 3..6 {
            assert_relative_eq!(last[i], x0[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn vdp_stays_near_limit_cycle() {
        let model = VanDerPolModel::new(VanDerPolParams { mu: 0.005 }).unwrap();
        let x0 = nalgebra::DVector::from_vec(vec![2.0, 2.0]);
        let traj = simulate_truth(&model, &x0, None, &zero_noise(2, 1), 0.01, 20.0, 1).unwrap();
        for x in &traj.states {
            let n = x.norm();
            assert!((0.1..=10.0).contains(&n), "state norm {n} left [0.1, 10]");
        }
    }
}
