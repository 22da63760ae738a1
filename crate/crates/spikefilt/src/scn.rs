//! Spike-coding-network substrate: decoder sampling, LIF membrane
//! integration, threshold/spike resolution through the fast recurrence,
//! filtered-trace dynamics, linear decoding and neuron silencing.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::pseudo_inverse;
use crate::{Error, Result, Scalar};

/// Columns with squared norm below this are resampled at construction;
/// a zero column would give a zero threshold and unbounded firing.
pub const EPSILON_COL: f64 = 1e-8;

/// Fixed random decoding matrix `D` (n_x × N) with cached squared column
/// norms. The decoded estimate is `x̂ = D·r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingMatrix<T: Scalar> {
    d: DMatrix<T>,
    column_norms_sq: DVector<T>,
}

impl<T: Scalar> DecodingMatrix<T> {
    /// Wrap an explicit decoder (used by tests with constructed columns).
    pub fn from_matrix(d: DMatrix<T>) -> Result<Self> {
        let eps = T::from_f64_lit(EPSILON_COL);
        let norms = DVector::from_iterator(d.ncols(), d.column_iter().map(|c| c.norm_squared()));
        if norms.iter().any(|&n| n < eps) {
            return Err(Error::Config(
                "decoder has a degenerate (near-zero) column".into(),
            ));
        }
        if d.ncols() < d.nrows() {
            return Err(Error::Config(format!(
                "decoder needs at least n_x = {} neurons, got {}",
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self {
            d,
            column_norms_sq: norms,
        })
    }

    /// Sample entries i.i.d. `N(0, sigma_d²)`, resampling degenerate
    /// columns. Deterministic given the seed.
    pub fn sample(n_x: usize, n_neurons: usize, sigma_d: T, seed: u64) -> Result<Self> {
        if n_neurons < n_x {
            return Err(Error::Config(format!(
                "need at least n_x = {n_x} neurons, got {n_neurons}"
            )));
        }
        if sigma_d <= T::zero() {
            return Err(Error::Config("decoder spread sigma_d must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = T::from_f64_lit(EPSILON_COL);
        let mut d = DMatrix::zeros(n_x, n_neurons);
        let mut norms = DVector::zeros(n_neurons);
        for j in 0..n_neurons {
            let mut attempts = 0;
            loop {
                let mut norm_sq = T::zero();
                for i in 0..n_x {
                    let v = sigma_d * T::from_f64_lit(rng.sample::<f64, _>(StandardNormal));
                    d[(i, j)] = v;
                    norm_sq += v * v;
                }
                if norm_sq >= eps {
                    norms[j] = norm_sq;
                    break;
                }
                attempts += 1;
                if attempts > 100 {
                    return Err(Error::Config(
                        "decoder spread too small: column resampling did not converge".into(),
                    ));
                }
            }
        }
        Ok(Self {
            d,
            column_norms_sq: norms,
        })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.d
    }

    pub fn n_x(&self) -> usize {
        self.d.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.d.ncols()
    }

    pub fn column_norms_sq(&self) -> &DVector<T> {
        &self.column_norms_sq
    }

    /// Firing thresholds `T_i = ‖D_i‖²/2`.
    pub fn thresholds(&self) -> Thresholds<T> {
        let half = T::from_f64_lit(0.5);
        Thresholds(&self.column_norms_sq * half)
    }

    /// Largest column norm; the decode resolution of a single spike.
    pub fn max_column_norm(&self) -> T {
        let mut it = self.column_norms_sq.iter();
        let first = *it.next().expect("at least one column");
        it.fold(first, |a, &b| a.max(b)).sqrt()
    }
}

/// Per-neuron firing thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds<T: Scalar>(pub DVector<T>);

/// Linear decode `x̂ = D·r`.
pub fn decode<T: Scalar>(decoder: &DecodingMatrix<T>, r: &DVector<T>) -> DVector<T> {
    decoder.matrix() * r
}

/// Membrane potentials, filtered traces, current-step spike counts and the
/// alive mask of one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T: Scalar> {
    pub v: DVector<T>,
    pub r: DVector<T>,
    pub s: Vec<u32>,
    pub alive: Vec<bool>,
    pub t: T,
}

impl<T: Scalar> NetworkState<T> {
    /// Start with zero membranes and traces chosen so `D·r(0) ≈ x̂₀`: the
    /// least-squares solution `D⁺·x̂₀` clipped at zero, then refined by the
    /// network's own greedy spike rule. The clipped fit alone leaves a large
    /// residual in higher dimensions (the clipping discards every negative
    /// trace the unconstrained solution relied on); the refinement closes
    /// the gap down to the coding resolution while keeping `r >= 0`.
    pub fn init(decoder: &DecodingMatrix<T>, x_hat0: &DVector<T>) -> Result<Self> {
        let n = decoder.n_neurons();
        let mut r = if x_hat0.iter().all(|v| *v == T::zero()) {
            DVector::zeros(n)
        } else {
            let (pinv, _) = pseudo_inverse(decoder.matrix())?;
            (pinv * x_hat0).map(|v| v.max(T::zero()))
        };
        if r.iter().any(|v| *v != T::zero()) {
            let d = decoder.matrix();
            let thresholds = decoder.thresholds();
            let omega_f = -(d.transpose() * d);
            let mut v = d.transpose() * (x_hat0 - d * &r);
            let alive = vec![true; n];
            let mut s = vec![0u32; n];
            spike_resolution(
                &mut v,
                &thresholds,
                &omega_f,
                &alive,
                SpikeMode::Sequential,
                50 * n,
                &mut s,
            );
            for (ri, &count) in r.iter_mut().zip(&s) {
                *ri += T::from_u32(count).unwrap();
            }
        }
        Ok(Self {
            v: DVector::zeros(n),
            r,
            s: vec![0; n],
            alive: vec![true; n],
            t: T::zero(),
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.alive.len()
    }

    /// Silence the listed neurons: they never spike again and their
    /// membrane and trace contributions are frozen at zero.
    pub fn silence(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            if i >= self.n_neurons() {
                return Err(Error::Config(format!(
                    "silencing index {i} out of range for {} neurons",
                    self.n_neurons()
                )));
            }
        }
        for &i in indices {
            self.alive[i] = false;
            self.v[i] = T::zero();
            self.r[i] = T::zero();
            self.s[i] = 0;
        }
        Ok(())
    }
}

/// Silencing schedule: from `at_time` onward the listed neurons are dead.
#[derive(Debug, Clone, PartialEq)]
pub struct SilenceSchedule<T: Scalar> {
    pub indices: Vec<usize>,
    pub at_time: T,
}

impl<T: Scalar> SilenceSchedule<T> {
    pub fn new(indices: Vec<usize>, at_time: T, n_neurons: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_neurons) {
            return Err(Error::Config(format!(
                "silencing index {bad} out of range for {n_neurons} neurons"
            )));
        }
        Ok(Self { indices, at_time })
    }
}

/// How supra-threshold neurons are resolved within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeMode {
    /// Greedy: the most supra-threshold neuron spikes, its fast-connection
    /// column updates every membrane, repeat until quiet (default).
    Sequential,
    /// One pass: every neuron above threshold spikes, then `v += Ω_f·s`.
    Simultaneous,
}

/// Result of spike resolution within one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpikeOutcome {
    pub spikes: u32,
    /// Sequential mode hit `max_iters` with neurons still above threshold.
    pub saturated: bool,
}

/// Resolve threshold crossings, mutating `v` through the fast connections
/// (`Ω_f = −DᵀD`) and filling the per-neuron spike counts `s`.
pub fn spike_resolution<T: Scalar>(
    v: &mut DVector<T>,
    thresholds: &Thresholds<T>,
    omega_f: &DMatrix<T>,
    alive: &[bool],
    mode: SpikeMode,
    max_iters: usize,
    s: &mut [u32],
) -> SpikeOutcome {
    s.iter_mut().for_each(|c| *c = 0);
    let mut outcome = SpikeOutcome::default();
    match mode {
        SpikeMode::Sequential => {
            for _ in 0..max_iters {
                let mut best: Option<(usize, T)> = None;
                for i in 0..v.len() {
                    if !alive[i] {
                        continue;
                    }
                    let excess = v[i] - thresholds.0[i];
                    if excess > T::zero() && best.map_or(true, |(_, b)| excess > b) {
                        best = Some((i, excess));
                    }
                }
                let Some((i, _)) = best else {
                    return outcome;
                };
                s[i] += 1;
                outcome.spikes += 1;
                v.axpy(T::one(), &omega_f.column(i).into_owned(), T::one());
            }
            // Anything still above threshold saturated the iteration budget.
            outcome.saturated = (0..v.len())
                .any(|i| alive[i] && v[i] - thresholds.0[i] > T::zero());
        }
        SpikeMode::Simultaneous => {
            let mut spike_vec = DVector::zeros(v.len());
            for i in 0..v.len() {
                if alive[i] && v[i] - thresholds.0[i] > T::zero() {
                    s[i] = 1;
                    outcome.spikes += 1;
                    spike_vec[i] = T::one();
                }
            }
            if outcome.spikes > 0 {
                *v += omega_f * spike_vec;
            }
        }
    }
    outcome
}

/// Leak/noise parameters of one LIF step.
#[derive(Debug, Clone, Copy)]
pub struct LifParams<T: Scalar> {
    pub lambda: T,
    pub dt: T,
    /// Membrane noise intensity; the per-step injection is
    /// `N(0, eta_sigma²·dt)` per alive neuron.
    pub eta_sigma: T,
    pub spike_mode: SpikeMode,
    pub max_iters: usize,
}

/// One Euler step of the LIF network:
///
/// `v ← v + dt·(−λv + drive + Ω_s·r) + η`, then spike resolution through
/// `Ω_f`, then `r ← r + dt·(−λr) + s`. The drive must already contain all
/// input terms (`F·u + F_k·z + Ω_k·r` for the filter networks). Silenced
/// neurons hold `v = 0`, `s = 0`.
pub fn lif_step<T: Scalar>(
    net: &mut NetworkState<T>,
    drive: &DVector<T>,
    omega_s: &DMatrix<T>,
    omega_f: &DMatrix<T>,
    thresholds: &Thresholds<T>,
    params: &LifParams<T>,
    rng: &mut ChaCha8Rng,
) -> Result<SpikeOutcome> {
    let dt = params.dt;
    let lambda = params.lambda;
    let noise_std = params.eta_sigma * dt.sqrt();

    let mut dv = drive + omega_s * &net.r;
    dv.axpy(-lambda, &net.v, T::one());
    net.v.axpy(dt, &dv, T::one());
    if noise_std > T::zero() {
        for i in 0..net.v.len() {
            if net.alive[i] {
                net.v[i] += noise_std * T::from_f64_lit(rng.sample::<f64, _>(StandardNormal));
            }
        }
    }
    for i in 0..net.v.len() {
        if !net.alive[i] {
            net.v[i] = T::zero();
        }
    }
    if net.v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            norm: f64::NAN,
        });
    }

    let outcome = spike_resolution(
        &mut net.v,
        thresholds,
        omega_f,
        &net.alive,
        params.spike_mode,
        params.max_iters,
        &mut net.s,
    );

    // Traces decay, then this step's spikes add unit mass.
    net.r *= T::one() - lambda * dt;
    for i in 0..net.r.len() {
        if net.s[i] > 0 {
            net.r[i] += T::from_u32(net.s[i]).unwrap();
        }
    }
    net.t += dt;
    Ok(outcome)
}
