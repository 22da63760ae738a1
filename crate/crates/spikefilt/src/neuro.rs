//! Network weight construction that makes the spike-coding substrate
//! implement SNN-EKF, SNN-EMSIF and SNN-EMSIF*, plus the closed-loop
//! estimation step and run loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::filters::{ekf_gain, innovation_covariance, msif_gain, riccati_step, sif_gain, FilterState};
use crate::scn::{
    decode, lif_step, DecodingMatrix, LifParams, NetworkState, SilenceSchedule, SpikeMode,
    Thresholds,
};
use crate::systems::{NoiseSpec, SystemModel, Trajectory};
use crate::{Error, Result, Scalar};

/// Which estimator the network weights implement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnnFilterKind {
    SnnEkf,
    SnnEmsif,
    /// Covariance-free EMSIF variant: the measurement-update weights come
    /// from the raw innovation, so the per-step path has no Riccati work.
    SnnEmsifStar,
}

impl SnnFilterKind {
    pub fn needs_covariance(&self) -> bool {
        !matches!(self, SnnFilterKind::SnnEmsifStar)
    }
}

/// The five network matrices plus thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T: Scalar> {
    /// Input encoder `F = DᵀB` (N × n_u).
    pub f: DMatrix<T>,
    /// Slow recurrence `Ω_s = Dᵀ(A + λI)D`.
    pub omega_s: DMatrix<T>,
    /// Fast recurrence `Ω_f = −DᵀD`.
    pub omega_f: DMatrix<T>,
    /// Measurement-update recurrence `Ω_k = −DᵀKCD`.
    pub omega_k: DMatrix<T>,
    /// Measurement encoder `F_k = DᵀK`.
    pub f_k: DMatrix<T>,
    pub thresholds: Thresholds<T>,
}

/// `F = DᵀB`, `Ω_s = Dᵀ(A + λI)D`, `Ω_f = −DᵀD`.
///
/// For a state-dependent `A` these are rebuilt every step at the current
/// estimate; for LTI models they are constant and cached by the runner.
pub fn static_weights<T: Scalar>(
    decoder: &DecodingMatrix<T>,
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    lambda: T,
) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let d = decoder.matrix();
    let dt_ = d.transpose();
    let f = &dt_ * b;
    let a_shift = a + DMatrix::from_diagonal(&DVector::from_element(a.nrows(), lambda));
    let omega_s = &dt_ * a_shift * d;
    let omega_f = -(&dt_ * d);
    (f, omega_s, omega_f)
}

fn update_weights_from_gain<T: Scalar>(
    decoder: &DecodingMatrix<T>,
    gain: &DMatrix<T>,
    c: &DMatrix<T>,
) -> (DMatrix<T>, DMatrix<T>) {
    let d = decoder.matrix();
    let f_k = d.transpose() * gain;
    let omega_k = -(&f_k * (c * d));
    (omega_k, f_k)
}

/// Kalman measurement-update weights `Ω_k = −Dᵀ(PCᵀR⁻¹)CD`,
/// `F_k = Dᵀ(PCᵀR⁻¹)`.
pub fn kalman_update_weights<T: Scalar>(
    decoder: &DecodingMatrix<T>,
    p: &DMatrix<T>,
    c: &DMatrix<T>,
    r_used: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let k = ekf_gain(p, c, r_used)?;
    Ok(update_weights_from_gain(decoder, &k, c))
}

/// MSIF measurement-update weights built from `C⁺·sat(diag(Pzz)/δ)`.
pub fn emsif_update_weights<T: Scalar>(
    decoder: &DecodingMatrix<T>,
    c: &DMatrix<T>,
    pzz: &DMatrix<T>,
    delta: T,
) -> Result<((DMatrix<T>, DMatrix<T>), bool)> {
    let (k, warn) = msif_gain(c, pzz, delta)?;
    Ok((update_weights_from_gain(decoder, &k, c), warn))
}

/// Innovation-based update weights built from `C⁺·sat(|z − ẑ|/δ)`; no
/// covariance is involved.
pub fn emsif_star_update_weights<T: Scalar>(
    decoder: &DecodingMatrix<T>,
    c: &DMatrix<T>,
    z: &DVector<T>,
    z_hat: &DVector<T>,
    delta: T,
) -> Result<((DMatrix<T>, DMatrix<T>), bool)> {
    let (k, warn) = sif_gain(c, &(z - z_hat), delta)?;
    Ok((update_weights_from_gain(decoder, &k, c), warn))
}

/// Configuration of one spiking filter instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnnFilterConfig<T: Scalar> {
    pub kind: SnnFilterKind,
    pub n_neurons: usize,
    /// Leak rate λ (1/s).
    pub lambda: T,
    /// Sliding boundary layer for the EMSIF kinds.
    pub delta: T,
    /// Standard deviation of the decoder entries.
    pub sigma_d: T,
    /// Membrane noise intensity (0 = deterministic network).
    pub eta_sigma: T,
    pub spike_mode: SpikeMode,
    pub seed: u64,
}

impl<T: Scalar> SnnFilterConfig<T> {
    pub fn validate(&self, n_x: usize) -> Result<()> {
        if self.n_neurons < n_x {
            return Err(Error::Config(format!(
                "n_neurons = {} below state dimension {n_x}",
                self.n_neurons
            )));
        }
        if self.lambda < T::zero() {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.kind != SnnFilterKind::SnnEkf && self.delta <= T::zero() {
            return Err(Error::Config("delta must be > 0 for EMSIF kinds".into()));
        }
        if self.sigma_d <= T::zero() {
            return Err(Error::Config("sigma_d must be > 0".into()));
        }
        Ok(())
    }
}

/// Sparse spike raster of one run: one `(step, neuron)` row per emitted
/// spike, with multi-spike steps repeating the row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeRaster {
    pub n_neurons: usize,
    pub dt: f64,
    pub steps: usize,
    pub events: Vec<(u32, u32)>,
}

impl SpikeRaster {
    pub fn total_spikes(&self) -> u64 {
        self.events.len() as u64
    }
}

/// Output of one spiking-filter step.
#[derive(Debug, Clone)]
pub struct SnnStepOutput<T: Scalar> {
    pub x_hat: DVector<T>,
    pub spikes: u32,
    pub saturated: bool,
    pub rank_warning: bool,
}

/// A running spiking filter: the network, its decoder, the companion
/// covariance (where the kind requires one) and cached static weights for
/// LTI models.
pub struct SnnFilter<T: Scalar> {
    config: SnnFilterConfig<T>,
    decoder: DecodingMatrix<T>,
    thresholds: Thresholds<T>,
    net: NetworkState<T>,
    omega_f: DMatrix<T>,
    /// Covariance companion; `None` for SNN-EMSIF*.
    cov: Option<FilterState<T>>,
    /// `(F, Ω_s)` cache, kept across steps for LTI models.
    static_cache: Option<(DMatrix<T>, DMatrix<T>)>,
    rng: ChaCha8Rng,
    clip_covariance: bool,
}

impl<T: Scalar> SnnFilter<T> {
    /// Build the filter for a model, sampling the decoder from
    /// `config.seed` and encoding `x̂₀` in the initial traces.
    pub fn new(
        config: SnnFilterConfig<T>,
        model: &dyn SystemModel<T>,
        x_hat0: &DVector<T>,
        p0: &DMatrix<T>,
    ) -> Result<Self> {
        config.validate(model.n_x())?;
        let decoder =
            DecodingMatrix::sample(model.n_x(), config.n_neurons, config.sigma_d, config.seed)?;
        Self::with_decoder(config, model, decoder, x_hat0, p0)
    }

    /// As [`SnnFilter::new`] but with an explicit decoder, so paired filter
    /// kinds can share one realization.
    pub fn with_decoder(
        config: SnnFilterConfig<T>,
        model: &dyn SystemModel<T>,
        decoder: DecodingMatrix<T>,
        x_hat0: &DVector<T>,
        p0: &DMatrix<T>,
    ) -> Result<Self> {
        config.validate(model.n_x())?;
        if decoder.n_x() != model.n_x() || decoder.n_neurons() != config.n_neurons {
            return Err(Error::Config("decoder shape does not match model/config".into()));
        }
        let thresholds = decoder.thresholds();
        let net = NetworkState::init(&decoder, x_hat0)?;
        let omega_f = -(decoder.matrix().transpose() * decoder.matrix());
        let cov = config
            .kind
            .needs_covariance()
            .then(|| FilterState::new(x_hat0.clone(), p0.clone()));
        // Membrane-noise stream; decoder sampling used its own seed.
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e3779b97f4a7c15));
        Ok(Self {
            config,
            decoder,
            thresholds,
            net,
            omega_f,
            cov,
            static_cache: None,
            rng,
            clip_covariance: false,
        })
    }

    /// Clamp negative covariance eigenvalues to zero after each Riccati
    /// step (scenario safety valve, off by default).
    pub fn enable_covariance_clipping(&mut self) {
        self.clip_covariance = true;
    }

    pub fn decoder(&self) -> &DecodingMatrix<T> {
        &self.decoder
    }

    pub fn network(&self) -> &NetworkState<T> {
        &self.net
    }

    pub fn covariance(&self) -> Option<&DMatrix<T>> {
        self.cov.as_ref().map(|c| &c.p)
    }

    pub fn silence(&mut self, indices: &[usize]) -> Result<()> {
        self.net.silence(indices)
    }

    /// Current decoded estimate `D·r`.
    pub fn estimate(&self) -> DVector<T> {
        decode(&self.decoder, &self.net.r)
    }

    /// One closed-loop step against the measurement sampled at `t + dt`:
    /// decode, linearize, update the gain weights per kind, rebuild the
    /// static weights (cached for LTI models), drive the LIF network, and
    /// decode the new estimate.
    pub fn step(
        &mut self,
        model: &dyn SystemModel<T>,
        u: &DVector<T>,
        z: &DVector<T>,
        noise_used: &NoiseSpec<T>,
        dt: T,
    ) -> Result<SnnStepOutput<T>> {
        let x_hat = self.estimate();
        let c = model.measurement_jacobian(&x_hat);

        let mut rank_warning = false;
        let (omega_k, f_k) = match self.config.kind {
            SnnFilterKind::SnnEkf => {
                let cov = self.cov.as_mut().expect("EKF kind keeps a covariance");
                let a = model.dynamics_jacobian(&x_hat);
                cov.p = riccati_step(&cov.p, &a, &noise_used.q, &c, &noise_used.r, dt)?;
                if self.clip_covariance {
                    cov.p = crate::linalg::clip_psd(&cov.p);
                }
                kalman_update_weights(&self.decoder, &cov.p, &c, &noise_used.r)?
            }
            SnnFilterKind::SnnEmsif => {
                let cov = self.cov.as_mut().expect("EMSIF kind keeps a covariance");
                let a = model.dynamics_jacobian(&x_hat);
                cov.p = riccati_step(&cov.p, &a, &noise_used.q, &c, &noise_used.r, dt)?;
                if self.clip_covariance {
                    cov.p = crate::linalg::clip_psd(&cov.p);
                }
                let pzz = innovation_covariance(&cov.p, &c, &noise_used.r);
                let (w, warn) = emsif_update_weights(&self.decoder, &c, &pzz, self.config.delta)?;
                rank_warning = warn;
                w
            }
            SnnFilterKind::SnnEmsifStar => {
                let z_hat = model.measurement(&x_hat);
                let (w, warn) =
                    emsif_star_update_weights(&self.decoder, &c, z, &z_hat, self.config.delta)?;
                rank_warning = warn;
                w
            }
        };

        let reuse_cache = model.is_lti() && self.static_cache.is_some();
        if !reuse_cache {
            // Ω_f never varies; rebuild only the linearization-dependent pair.
            let a = model.dynamics_jacobian(&x_hat);
            let b = model.input_jacobian(u);
            let d = self.decoder.matrix();
            let dt_ = d.transpose();
            let f = &dt_ * b;
            let a_shift = a + DMatrix::from_diagonal(&DVector::from_element(
                model.n_x(),
                self.config.lambda,
            ));
            let omega_s = &dt_ * a_shift * d;
            self.static_cache = Some((f, omega_s));
        }
        let (f, omega_s) = self.static_cache.as_ref().expect("cache just filled");

        // Ω_k·r joins the same Euler increment as Ω_s·r.
        let drive = f * u + &f_k * z + &omega_k * &self.net.r;
        let params = LifParams {
            lambda: self.config.lambda,
            dt,
            eta_sigma: self.config.eta_sigma,
            spike_mode: self.config.spike_mode,
            max_iters: self.config.n_neurons,
        };
        let outcome = lif_step(
            &mut self.net,
            &drive,
            omega_s,
            &self.omega_f,
            &self.thresholds,
            &params,
            &mut self.rng,
        )?;

        let x_hat = self.estimate();
        let norm = x_hat.norm().to_f64();
        if !norm.is_finite() || norm > crate::DIVERGENCE_NORM {
            return Err(Error::Divergence { step: 0, norm });
        }
        if let Some(cov) = self.cov.as_mut() {
            cov.x_hat = x_hat.clone();
            cov.t += dt;
        }
        Ok(SnnStepOutput {
            x_hat,
            spikes: outcome.spikes,
            saturated: outcome.saturated,
            rank_warning,
        })
    }
}

/// Full output of one spiking-filter run.
#[derive(Debug, Clone)]
pub struct SnnRun<T: Scalar> {
    /// Decoded estimates at every trajectory sample (index 0 is the initial
    /// trace encoding of `x̂₀`).
    pub estimates: Vec<DVector<T>>,
    /// Covariance diagonals per sample for kinds that keep one.
    pub p_diagonals: Option<Vec<DVector<T>>>,
    pub raster: SpikeRaster,
    /// Wall-clock seconds per filter step.
    pub step_times: Vec<f64>,
    pub saturated_steps: usize,
    pub rank_warnings: usize,
}

/// Run a spiking filter over a recorded trajectory, collecting estimates,
/// the spike raster and per-step wall times. The optional silencing
/// schedule is applied once its onset time is reached.
pub fn run_snn_filter<T: Scalar>(
    config: &SnnFilterConfig<T>,
    model: &dyn SystemModel<T>,
    noise_used: &NoiseSpec<T>,
    x_hat0: &DVector<T>,
    p0: &DMatrix<T>,
    trajectory: &Trajectory<T>,
    silencing: Option<&SilenceSchedule<T>>,
) -> Result<SnnRun<T>> {
    let filter = SnnFilter::new(*config, model, x_hat0, p0)?;
    run_prepared_snn_filter(filter, model, noise_used, trajectory, silencing)
}

/// As [`run_snn_filter`] with a pre-built filter (shared decoders, sweeps).
pub fn run_prepared_snn_filter<T: Scalar>(
    mut filter: SnnFilter<T>,
    model: &dyn SystemModel<T>,
    noise_used: &NoiseSpec<T>,
    trajectory: &Trajectory<T>,
    silencing: Option<&SilenceSchedule<T>>,
) -> Result<SnnRun<T>> {
    let steps = trajectory.steps();
    let mut estimates = Vec::with_capacity(steps + 1);
    let mut p_diagonals = filter
        .cov
        .is_some()
        .then(|| Vec::with_capacity(steps + 1));
    let mut raster = SpikeRaster {
        n_neurons: filter.config.n_neurons,
        dt: trajectory.dt.to_f64(),
        steps,
        events: Vec::new(),
    };
    let mut step_times = Vec::with_capacity(steps);
    let mut saturated_steps = 0;
    let mut rank_warnings = 0;
    let mut silenced = false;

    estimates.push(filter.estimate());
    if let (Some(diags), Some(cov)) = (p_diagonals.as_mut(), filter.cov.as_ref()) {
        diags.push(cov.p.diagonal());
    }

    for k in 0..steps {
        if let Some(schedule) = silencing {
            if !silenced && trajectory.times[k] >= schedule.at_time {
                filter.silence(&schedule.indices)?;
                silenced = true;
            }
        }
        let started = Instant::now();
        let out = filter
            .step(
                model,
                &trajectory.inputs[k],
                &trajectory.measurements[k + 1],
                noise_used,
                trajectory.dt,
            )
            .map_err(|e| e.at_step(k + 1))?;
        step_times.push(started.elapsed().as_secs_f64());

        for (i, &count) in filter.net.s.iter().enumerate() {
            for _ in 0..count {
                raster.events.push((k as u32, i as u32));
            }
        }
        if out.saturated {
            saturated_steps += 1;
        }
        if out.rank_warning {
            rank_warnings += 1;
        }
        estimates.push(out.x_hat);
        if let (Some(diags), Some(cov)) = (p_diagonals.as_mut(), filter.cov.as_ref()) {
            diags.push(cov.p.diagonal());
        }
    }

    Ok(SnnRun {
        estimates,
        p_diagonals,
        raster,
        step_times,
        saturated_steps,
        rank_warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{LtiModel, VanDerPolModel, VanDerPolParams};
    use crate::{Matrix64, Vector64};
    use approx::assert_relative_eq;

    fn vdp() -> VanDerPolModel<f64> {
        VanDerPolModel::new(VanDerPolParams { mu: 0.005 }).unwrap()
    }

    fn vdp_noise() -> NoiseSpec<f64> {
        NoiseSpec {
            q: Matrix64::identity(2, 2) * 0.01,
            r: Matrix64::from_element(1, 1, 0.1),
        }
    }

    fn snn_config(kind: SnnFilterKind) -> SnnFilterConfig<f64> {
        SnnFilterConfig {
            kind,
            n_neurons: 100,
            lambda: 0.5,
            delta: 0.05,
            sigma_d: 0.5,
            eta_sigma: 0.0,
            spike_mode: SpikeMode::Sequential,
            seed: 17,
        }
    }

    #[test]
    fn static_weight_identities() {
        let d = DecodingMatrix::from_matrix(Matrix64::identity(2, 2)).unwrap();
        let a = Matrix64::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
        let b = Matrix64::from_row_slice(2, 1, &[1.0, -1.0]);
        let lambda = 0.5;

        // Identity decoder: Ω_s = A + λI, Ω_f = −I, F = B.
        let (f, omega_s, omega_f) = static_weights(&d, &a, &b, lambda);
        assert_relative_eq!(
            (omega_s - (&a + Matrix64::identity(2, 2) * lambda)).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!((omega_f + Matrix64::identity(2, 2)).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!((f - &b).norm(), 0.0, epsilon = 1e-14);

        // A = −λI cancels exactly.
        let (_, omega_s, _) = static_weights(&d, &(Matrix64::identity(2, 2) * -lambda), &b, lambda);
        assert_relative_eq!(omega_s.norm(), 0.0, epsilon = 1e-14);

        // B = 0 gives F = 0 regardless of decoder.
        let dd = DecodingMatrix::<f64>::sample(2, 30, 0.5, 1).unwrap();
        let (f, _, _) = static_weights(&dd, &a, &Matrix64::zeros(2, 1), lambda);
        assert_eq!(f, Matrix64::zeros(30, 1));
    }

    #[test]
    fn kalman_update_weight_cases() {
        let d = DecodingMatrix::from_matrix(Matrix64::identity(2, 2)).unwrap();
        let c = Matrix64::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = Matrix64::from_element(1, 1, 0.1);

        let (omega_k, f_k) =
            kalman_update_weights(&d, &Matrix64::zeros(2, 2), &c, &r).unwrap();
        assert_eq!(omega_k, Matrix64::zeros(2, 2));
        assert_eq!(f_k, Matrix64::zeros(2, 1));

        // Identity decoder: Ω_k = −KC, F_k = K.
        let p = Matrix64::from_partial_diagonal(2, 2, &[2.0, 3.0]);
        let (omega_k, f_k) = kalman_update_weights(&d, &p, &c, &r).unwrap();
        let k = ekf_gain(&p, &c, &r).unwrap();
        assert_relative_eq!((&f_k - &k).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((omega_k + k * &c).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn omega_k_identity_holds_for_all_kinds() {
        let decoder = DecodingMatrix::<f64>::sample(2, 40, 0.5, 3).unwrap();
        let c = Matrix64::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = Matrix64::from_element(1, 1, 0.1);
        let p = Matrix64::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.08]);
        let cd = &c * decoder.matrix();

        let (omega_k, f_k) = kalman_update_weights(&decoder, &p, &c, &r).unwrap();
        assert_relative_eq!((&omega_k + &f_k * &cd).norm(), 0.0, epsilon = 1e-12);

        let pzz = innovation_covariance(&p, &c, &r);
        let ((omega_k, f_k), _) = emsif_update_weights(&decoder, &c, &pzz, 0.05).unwrap();
        assert_relative_eq!((&omega_k + &f_k * &cd).norm(), 0.0, epsilon = 1e-12);

        let z = Vector64::from_vec(vec![0.3]);
        let z_hat = Vector64::from_vec(vec![0.1]);
        let ((omega_k, f_k), _) =
            emsif_star_update_weights(&decoder, &c, &z, &z_hat, 0.05).unwrap();
        assert_relative_eq!((&omega_k + &f_k * &cd).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn star_matches_emsif_at_full_saturation() {
        let decoder = DecodingMatrix::<f64>::sample(2, 25, 0.5, 5).unwrap();
        let c = Matrix64::from_row_slice(1, 2, &[1.0, 0.0]);
        // Saturated on both routes: diag(Pzz)/δ ≥ 1 and |z − ẑ|/δ ≥ 1.
        let pzz = Matrix64::from_element(1, 1, 10.0);
        let ((ok_a, fk_a), _) = emsif_update_weights(&decoder, &c, &pzz, 0.05).unwrap();
        let z = Vector64::from_vec(vec![5.0]);
        let z_hat = Vector64::from_vec(vec![0.0]);
        let ((ok_b, fk_b), _) = emsif_star_update_weights(&decoder, &c, &z, &z_hat, 0.05).unwrap();
        assert_relative_eq!((ok_a - ok_b).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((fk_a - &fk_b).norm(), 0.0, epsilon = 1e-12);

        // F_k = DᵀC⁺ at saturation.
        let (c_pinv, _) = crate::linalg::pseudo_inverse(&c).unwrap();
        assert_relative_eq!(
            (&fk_b - decoder.matrix().transpose() * c_pinv).norm(),
            0.0,
            epsilon = 1e-12
        );

        // Zero innovation zeroes both weights.
        let ((ok_z, fk_z), _) =
            emsif_star_update_weights(&decoder, &c, &z_hat, &z_hat, 0.05).unwrap();
        assert_eq!(ok_z, Matrix64::zeros(25, 25));
        assert_eq!(fk_z, Matrix64::zeros(25, 1));
    }

    #[test]
    fn omega_f_is_symmetric_negative_semidefinite() {
        let decoder = DecodingMatrix::<f64>::sample(2, 30, 0.5, 11).unwrap();
        let omega_f = -(decoder.matrix().transpose() * decoder.matrix());
        assert_relative_eq!((&omega_f - omega_f.transpose()).norm(), 0.0, epsilon = 1e-12);
        assert!(crate::linalg::min_eigenvalue(&(-&omega_f)) > -1e-10);
    }

    #[test]
    fn gain_boundedness_for_emsif_weights() {
        let decoder = DecodingMatrix::<f64>::sample(2, 30, 0.5, 13).unwrap();
        let c = Matrix64::from_row_slice(1, 2, &[1.0, 0.0]);
        let (c_pinv, _) = crate::linalg::pseudo_inverse(&c).unwrap();
        let bound = crate::linalg::operator_norm(&decoder.matrix().transpose())
            * crate::linalg::operator_norm(&c_pinv)
            + 1e-9;
        for pzz_val in [0.001, 0.04, 0.3, 10.0] {
            let pzz = Matrix64::from_element(1, 1, pzz_val);
            let ((_, f_k), _) = emsif_update_weights(&decoder, &c, &pzz, 0.05).unwrap();
            assert!(crate::linalg::operator_norm(&f_k) <= bound);
        }
    }

    #[test]
    fn self_consistent_measurements_track_pure_propagation() {
        // Feeding z = h(x̂) makes the innovation path vanish; the decoded
        // estimate then drifts from pure model propagation by no more than
        // the decode resolution (bound measured once and frozen).
        let model = vdp();
        let noise = vdp_noise();
        let mut filter = SnnFilter::new(
            snn_config(SnnFilterKind::SnnEmsif),
            &model,
            &Vector64::from_vec(vec![2.0, 2.0]),
            &(Matrix64::identity(2, 2) * 0.01),
        )
        .unwrap();
        let mut reference = Vector64::from_vec(vec![2.0, 2.0]);
        let dt = 0.01;
        let u = Vector64::zeros(1);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let z = model.measurement(&filter.estimate());
            let out = filter.step(&model, &u, &z, &noise, dt).unwrap();
            reference = &reference + model.dynamics(&reference, &u).unwrap() * dt;
            worst = worst.max((&out.x_hat - &reference).norm());
        }
        let resolution = filter.decoder().max_column_norm();
        assert!(
            worst <= 2.0 * resolution,
            "decode drift {worst} above 2x resolution {resolution}"
        );
    }

    #[test]
    fn zero_length_trajectory_gives_empty_outputs() {
        let model = vdp();
        let noise = vdp_noise();
        let traj = Trajectory {
            dt: 0.01,
            times: vec![0.0],
            states: vec![Vector64::from_vec(vec![2.0, 2.0])],
            inputs: vec![Vector64::zeros(1)],
            measurements: vec![Vector64::zeros(1)],
            seed: 0,
        };
        let run = run_snn_filter(
            &snn_config(SnnFilterKind::SnnEmsif),
            &model,
            &noise,
            &Vector64::zeros(2),
            &(Matrix64::identity(2, 2) * 0.01),
            &traj,
            None,
        )
        .unwrap();
        assert_eq!(run.estimates.len(), 1);
        assert!(run.raster.events.is_empty());
        assert!(run.step_times.is_empty());
    }

    #[test]
    fn runs_are_deterministic_given_seed() {
        let model = vdp();
        let noise = vdp_noise();
        let traj = crate::systems::simulate_truth(
            &model,
            &Vector64::from_vec(vec![2.0, 2.0]),
            None,
            &noise,
            0.01,
            3.0,
            77,
        )
        .unwrap();
        let cfg = snn_config(SnnFilterKind::SnnEmsif);
        let p0 = Matrix64::identity(2, 2) * 0.01;
        let a = run_snn_filter(&cfg, &model, &noise, &Vector64::zeros(2), &p0, &traj, None).unwrap();
        let b = run_snn_filter(&cfg, &model, &noise, &Vector64::zeros(2), &p0, &traj, None).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.raster, b.raster);
    }

    #[test]
    fn sparsity_monotone_in_delta() {
        // Larger boundary layer, smaller gains, fewer spikes; fixed seed.
        let model = vdp();
        let noise = vdp_noise();
        let traj = crate::systems::simulate_truth(
            &model,
            &Vector64::from_vec(vec![2.0, 2.0]),
            None,
            &noise,
            0.01,
            5.0,
            123,
        )
        .unwrap();
        let p0 = Matrix64::identity(2, 2) * 0.01;
        let mut counts = Vec::new();
        for delta in [0.0125, 0.05, 0.2] {
            let mut cfg = snn_config(SnnFilterKind::SnnEmsif);
            cfg.delta = delta;
            let run =
                run_snn_filter(&cfg, &model, &noise, &Vector64::zeros(2), &p0, &traj, None).unwrap();
            counts.push(run.raster.total_spikes());
        }
        assert!(
            counts[0] >= counts[1] && counts[1] >= counts[2],
            "spike counts not monotone in delta: {counts:?}"
        );
    }

    #[test]
    fn lti_static_cache_matches_recompute() {
        // On an LTI model the cached static weights must give the same run
        // as a filter forced to rebuild them every step.
        let a = Matrix64::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.1]);
        let b = Matrix64::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = Matrix64::from_row_slice(1, 2, &[1.0, 0.0]);
        let lti = LtiModel::new(a.clone(), b.clone(), c.clone()).unwrap();

        // Same matrices behind a wrapper that denies being LTI.
        struct NotLti(LtiModel<f64>);
        impl SystemModel<f64> for NotLti {
            fn n_x(&self) -> usize {
                self.0.n_x()
            }
            fn n_u(&self) -> usize {
                self.0.n_u()
            }
            fn n_z(&self) -> usize {
                self.0.n_z()
            }
            fn dynamics(&self, x: &Vector64, u: &Vector64) -> crate::Result<Vector64> {
                self.0.dynamics(x, u)
            }
            fn measurement(&self, x: &Vector64) -> Vector64 {
                self.0.measurement(x)
            }
            fn dynamics_jacobian(&self, x: &Vector64) -> Matrix64 {
                self.0.dynamics_jacobian(x)
            }
            fn input_jacobian(&self, u: &Vector64) -> Matrix64 {
                self.0.input_jacobian(u)
            }
            fn measurement_jacobian(&self, x: &Vector64) -> Matrix64 {
                self.0.measurement_jacobian(x)
            }
        }

        let noise = NoiseSpec {
            q: Matrix64::identity(2, 2) * 0.001,
            r: Matrix64::from_element(1, 1, 0.05),
        };
        let traj = crate::systems::simulate_truth(
            &lti,
            &Vector64::from_vec(vec![1.0, 0.0]),
            None,
            &noise,
            0.01,
            2.0,
            55,
        )
        .unwrap();
        let cfg = SnnFilterConfig {
            kind: SnnFilterKind::SnnEmsif,
            n_neurons: 40,
            lambda: 0.5,
            delta: 0.05,
            sigma_d: 0.5,
            eta_sigma: 0.0,
            spike_mode: SpikeMode::Sequential,
            seed: 9,
        };
        let p0 = Matrix64::identity(2, 2) * 0.01;
        let x0 = Vector64::zeros(2);
        let cached = run_snn_filter(&cfg, &lti, &noise, &x0, &p0, &traj, None).unwrap();
        let rebuilt =
            run_snn_filter(&cfg, &NotLti(lti.clone()), &noise, &x0, &p0, &traj, None).unwrap();
        assert_eq!(cached.estimates, rebuilt.estimates);
        assert_eq!(cached.raster, rebuilt.raster);
    }
}
