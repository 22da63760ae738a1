//! Scenario orchestration: Monte-Carlo batches, mismatch injection, RMSE /
//! coverage / sparsity / runtime metrics, neuron-count sweeps and silencing
//! experiments.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::{FilterKind, ScenarioConfig, SystemKind};
use crate::filters::{filter_step, FilterState, GainRule};
use crate::neuro::{run_prepared_snn_filter, SnnFilter, SnnFilterConfig, SpikeRaster};
use crate::scn::{DecodingMatrix, SilenceSchedule};
use crate::systems::{
    mean_motion, simulate_truth, NoiseSpec, RendezvousModel, RendezvousParams, SystemModel,
    Trajectory, VanDerPolModel, VanDerPolParams,
};
use crate::{Error, Matrix64, Result, Vector64};

/// SplitMix64-style seed derivation; run k draws an independent stream from
/// `(master, k)` so execution order cannot matter.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TRAJECTORY: u64 = 101;
const STREAM_DECODER: u64 = 202;
const STREAM_FILTER_BASE: u64 = 300;

/// A fully built experiment: model, true and mismatched noise, controller
/// and initial conditions.
pub struct Scenario {
    pub config: ScenarioConfig,
    model: Box<dyn SystemModel<f64>>,
    noise_true: NoiseSpec<f64>,
    noise_used: NoiseSpec<f64>,
    controller: Option<Matrix64>,
    x0: Vector64,
    x_hat0: Vector64,
    p0: Matrix64,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let s = &config.scenario;
        let (model, controller, x0, x_hat0, q, r, p0): (
            Box<dyn SystemModel<f64>>,
            Option<Matrix64>,
            Vector64,
            Vector64,
            Matrix64,
            Matrix64,
            Matrix64,
        ) = match s.system {
            SystemKind::VanDerPol => {
                let sec = config.van_der_pol.as_ref().expect("validated");
                (
                    Box::new(VanDerPolModel::new(VanDerPolParams { mu: sec.mu })?),
                    None,
                    Vector64::from_vec(sec.x0.clone()),
                    Vector64::from_vec(sec.x_hat0.clone()),
                    Matrix64::from_diagonal(&Vector64::from_vec(sec.q_diag.clone())),
                    Matrix64::from_diagonal(&Vector64::from_vec(sec.r_diag.clone())),
                    Matrix64::from_diagonal(&Vector64::from_vec(sec.p0_diag.clone())),
                )
            }
            SystemKind::Rendezvous => {
                let sec = config.rendezvous.as_ref().expect("validated");
                let n = mean_motion(sec.r_o_km, sec.mu_earth)?;
                let mut k_ctrl = Matrix64::zeros(3, 6);
                for (i, row) in sec.k_ctrl.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        k_ctrl[(i, j)] = *v;
                    }
                }
                let params = RendezvousParams {
                    mean_motion: n,
                    k_ctrl: k_ctrl.clone(),
                    variant: sec.cw_variant,
                };
                (
                    Box::new(RendezvousModel::new(params)?),
                    Some(k_ctrl),
                    Vector64::from_vec(sec.x0.clone()),
                    Vector64::from_vec(sec.x_hat0.clone()),
                    Matrix64::from_diagonal(&Vector64::from_vec(sec.q_diag.clone())),
                    Matrix64::from_diagonal(&Vector64::from_vec(sec.r_diag.clone())),
                    Matrix64::from_diagonal(&Vector64::from_vec(sec.p0_diag.clone())),
                )
            }
        };
        let noise_true = NoiseSpec::new(q, r)?;
        let noise_used = noise_true.scaled(s.alpha_q, s.alpha_r);
        Ok(Self {
            config,
            model,
            noise_true,
            noise_used,
            controller,
            x0,
            x_hat0,
            p0,
        })
    }

    pub fn model(&self) -> &dyn SystemModel<f64> {
        self.model.as_ref()
    }

    pub fn noise_true(&self) -> &NoiseSpec<f64> {
        &self.noise_true
    }

    pub fn noise_used(&self) -> &NoiseSpec<f64> {
        &self.noise_used
    }

    pub fn initial_state(&self) -> (&Vector64, &Vector64, &Matrix64) {
        (&self.x0, &self.x_hat0, &self.p0)
    }

    fn steps(&self) -> usize {
        (self.config.scenario.t_end / self.config.scenario.dt).round() as usize
    }

    fn snn_config(&self, kind: FilterKind, n_neurons: usize, seed: u64) -> SnnFilterConfig<f64> {
        let snn = self.config.snn.as_ref().expect("snn section validated");
        SnnFilterConfig {
            kind: kind.snn_kind().expect("snn filter kind"),
            n_neurons,
            lambda: snn.lambda,
            delta: snn.delta,
            sigma_d: snn.sigma_d,
            eta_sigma: snn.eta_sigma,
            spike_mode: snn.spike_mode,
            seed,
        }
    }

    /// First ⌈fraction·N⌉ indices, silenced from the configured onset.
    fn silencing_schedule(&self, n_neurons: usize) -> Result<Option<SilenceSchedule<f64>>> {
        match &self.config.silencing {
            None => Ok(None),
            Some(sec) => {
                let count = ((sec.fraction * n_neurons as f64).ceil() as usize).min(n_neurons);
                let schedule =
                    SilenceSchedule::new((0..count).collect(), sec.onset_time, n_neurons)?;
                Ok(Some(schedule))
            }
        }
    }

    pub fn simulate_run_truth(&self, run_idx: usize) -> Result<Trajectory<f64>> {
        let run_seed = derive_seed(self.config.scenario.master_seed, run_idx as u64 + 1);
        simulate_truth(
            self.model.as_ref(),
            &self.x0,
            self.controller.as_ref(),
            &self.noise_true,
            self.config.scenario.dt,
            self.config.scenario.t_end,
            derive_seed(run_seed, STREAM_TRAJECTORY),
        )
    }
}

/// Everything one filter produced in one run.
#[derive(Debug, Clone)]
pub struct FilterRunOutput {
    pub kind: FilterKind,
    /// Estimates at every sample; empty when the run diverged.
    pub estimates: Vec<Vector64>,
    pub p_diagonals: Option<Vec<Vector64>>,
    pub raster: Option<SpikeRaster>,
    pub step_times: Vec<f64>,
    pub diverged: Option<usize>,
    pub saturated_steps: usize,
    pub rank_warnings: usize,
}

fn run_classical_filter(
    model: &dyn SystemModel<f64>,
    rule: &GainRule<f64>,
    noise_used: &NoiseSpec<f64>,
    x_hat0: &Vector64,
    p0: &Matrix64,
    trajectory: &Trajectory<f64>,
    clip_covariance: bool,
) -> Result<(Vec<Vector64>, Vec<Vector64>, Vec<f64>, usize)> {
    let steps = trajectory.steps();
    let mut state = FilterState::new(x_hat0.clone(), p0.clone());
    let mut estimates = Vec::with_capacity(steps + 1);
    let mut p_diags = Vec::with_capacity(steps + 1);
    let mut step_times = Vec::with_capacity(steps);
    let mut rank_warnings = 0;
    estimates.push(state.x_hat.clone());
    p_diags.push(state.p.diagonal());
    for k in 0..steps {
        let started = Instant::now();
        let (next, info) = filter_step(
            &state,
            model,
            &trajectory.inputs[k],
            &trajectory.measurements[k + 1],
            rule,
            noise_used,
            trajectory.dt,
        )
        .map_err(|e| e.at_step(k + 1))?;
        state = next;
        if clip_covariance {
            state.p = crate::linalg::clip_psd(&state.p);
        }
        step_times.push(started.elapsed().as_secs_f64());
        if info.rank_warning {
            rank_warnings += 1;
        }
        estimates.push(state.x_hat.clone());
        p_diags.push(state.p.diagonal());
    }
    Ok((estimates, p_diags, step_times, rank_warnings))
}

/// Run every scenario filter against one shared truth trajectory.
pub fn run_single(
    scenario: &Scenario,
    run_idx: usize,
    n_neurons_override: Option<usize>,
    filter_subset: Option<&[FilterKind]>,
) -> Result<(Trajectory<f64>, Vec<FilterRunOutput>)> {
    let trajectory = scenario.simulate_run_truth(run_idx)?;
    let run_seed = derive_seed(scenario.config.scenario.master_seed, run_idx as u64 + 1);
    let filters: Vec<FilterKind> = scenario
        .config
        .scenario
        .filters
        .iter()
        .copied()
        .filter(|f| filter_subset.map_or(true, |subset| subset.contains(f)))
        .collect();

    // All spiking kinds in a run share one decoder realization so the
    // comparison is paired; the decoder still varies across runs.
    let n_neurons = n_neurons_override
        .or(scenario.config.snn.as_ref().map(|s| s.n_neurons))
        .unwrap_or(0);
    let decoder = if filters.iter().any(FilterKind::is_snn) {
        Some(DecodingMatrix::<f64>::sample(
            scenario.model.n_x(),
            n_neurons,
            scenario.config.snn.as_ref().expect("validated").sigma_d,
            derive_seed(run_seed, STREAM_DECODER),
        )?)
    } else {
        None
    };
    let silencing = scenario.silencing_schedule(n_neurons)?;

    let mut outputs = Vec::with_capacity(filters.len());
    for (idx, kind) in filters.iter().enumerate() {
        let output = run_one_filter(
            scenario,
            *kind,
            idx,
            run_seed,
            &trajectory,
            decoder.as_ref(),
            n_neurons,
            silencing.as_ref(),
        );
        match output {
            Ok(out) => outputs.push(out),
            Err(e) if e.is_divergence() => {
                let step = match e {
                    Error::Divergence { step, .. } => step,
                    _ => unreachable!(),
                };
                outputs.push(FilterRunOutput {
                    kind: *kind,
                    estimates: Vec::new(),
                    p_diagonals: None,
                    raster: None,
                    step_times: Vec::new(),
                    diverged: Some(step),
                    saturated_steps: 0,
                    rank_warnings: 0,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((trajectory, outputs))
}

#[allow(clippy::too_many_arguments)]
fn run_one_filter(
    scenario: &Scenario,
    kind: FilterKind,
    kind_idx: usize,
    run_seed: u64,
    trajectory: &Trajectory<f64>,
    decoder: Option<&DecodingMatrix<f64>>,
    n_neurons: usize,
    silencing: Option<&SilenceSchedule<f64>>,
) -> Result<FilterRunOutput> {
    let clip = scenario.config.scenario.clip_covariance;
    if let Some(rule) = kind.gain_rule(scenario.config.snn.as_ref().map_or(0.0, |s| s.delta)) {
        rule.validate()?;
        let (estimates, p_diags, step_times, rank_warnings) = run_classical_filter(
            scenario.model.as_ref(),
            &rule,
            &scenario.noise_used,
            &scenario.x_hat0,
            &scenario.p0,
            trajectory,
            clip,
        )?;
        return Ok(FilterRunOutput {
            kind,
            estimates,
            p_diagonals: Some(p_diags),
            raster: None,
            step_times,
            diverged: None,
            saturated_steps: 0,
            rank_warnings,
        });
    }

    let cfg = scenario.snn_config(
        kind,
        n_neurons,
        derive_seed(run_seed, STREAM_FILTER_BASE + kind_idx as u64),
    );
    let mut filter = SnnFilter::with_decoder(
        cfg,
        scenario.model.as_ref(),
        decoder.expect("decoder sampled for snn kinds").clone(),
        &scenario.x_hat0,
        &scenario.p0,
    )?;
    if clip {
        filter.enable_covariance_clipping();
    }
    let run = run_prepared_snn_filter(
        filter,
        scenario.model.as_ref(),
        &scenario.noise_used,
        trajectory,
        silencing,
    )?;
    Ok(FilterRunOutput {
        kind,
        estimates: run.estimates,
        p_diagonals: run.p_diagonals,
        raster: Some(run.raster),
        step_times: run.step_times,
        diverged: None,
        saturated_steps: run.saturated_steps,
        rank_warnings: run.rank_warnings,
    })
}

/// Aggregated metrics of one filter across a Monte-Carlo batch.
#[derive(Debug, Clone)]
pub struct FilterMetrics {
    pub kind: FilterKind,
    /// Per-state ensemble RMSE at every sample (empty if every run diverged).
    pub rmse_series: Vec<Vector64>,
    /// Mean of the RMSE series over the trailing window, per state.
    pub window_rmse: Vector64,
    /// Euclidean norm of `window_rmse`.
    pub delta_x: f64,
    /// Fraction of window (step, state) pairs with |error| <= 3σ, pooled
    /// over runs; `None` for filters without a covariance.
    pub coverage: Option<f64>,
    pub spikes_total: Option<u64>,
    pub spike_fraction: Option<f64>,
    pub runtime_mean_ms: f64,
    pub runtime_p95_ms: f64,
    pub divergent_runs: usize,
    pub included_runs: usize,
    pub saturated_steps: usize,
    pub rank_warnings: usize,
}

/// Outputs of [`monte_carlo`].
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub times: Vec<f64>,
    pub per_filter: Vec<FilterMetrics>,
    pub mc_runs: usize,
    pub steps: usize,
    pub n_neurons: Option<usize>,
    /// Raster of the first non-divergent run per spiking filter.
    pub rasters: Vec<(FilterKind, SpikeRaster)>,
}

/// Pointwise RMS over runs: `RMSE_i(t) = sqrt(mean_k e_{k,i}(t)²)`.
/// Runs are combined in index order, so any execution order yields
/// bit-identical output.
pub fn rmse_from_error_runs(error_runs: &[Vec<Vector64>]) -> Vec<Vector64> {
    let Some(first) = error_runs.first() else {
        return Vec::new();
    };
    let samples = first.len();
    let n_x = first.first().map_or(0, |v| v.len());
    let mut acc = vec![Vector64::zeros(n_x); samples];
    for run in error_runs {
        for (k, e) in run.iter().enumerate() {
            acc[k] += e.component_mul(e);
        }
    }
    let m = error_runs.len() as f64;
    acc.into_iter().map(|v| (v / m).map(f64::sqrt)).collect()
}

/// Euclidean combination of per-state window RMSEs.
pub fn combined_rmse(per_state: &[f64]) -> f64 {
    per_state.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fraction of (step, state) pairs with `|error| <= 3·sqrt(P_ii)`.
pub fn sigma_bounds_check(errors: &[Vector64], p_diagonals: &[Vector64]) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for (e, p) in errors.iter().zip(p_diagonals) {
        for i in 0..e.len() {
            total += 1;
            if e[i].abs() <= 3.0 * p[i].max(0.0).sqrt() {
                inside += 1;
            }
        }
    }
    if total == 0 {
        return f64::NAN;
    }
    inside as f64 / total as f64
}

/// Emitted spikes over the total spike budget `N·steps`.
pub fn spike_efficiency(total_spikes: u64, n_neurons: usize, steps: usize) -> f64 {
    if n_neurons == 0 || steps == 0 {
        return 0.0;
    }
    total_spikes as f64 / (n_neurons as f64 * steps as f64)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Indexed run results -> MetricsRecord. Separated from the parallel driver
/// so aggregation order (and thus byte-level determinism) is testable.
pub fn aggregate_runs(
    scenario: &Scenario,
    times: Vec<f64>,
    mut runs: Vec<(usize, Vec<FilterRunOutput>, Vec<Vector64>)>,
    filters: &[FilterKind],
    n_neurons: Option<usize>,
) -> MetricsRecord {
    runs.sort_by_key(|(idx, _, _)| *idx);
    let steps = times.len().saturating_sub(1);
    let window = scenario.config.rmse_window();
    let t_end = scenario.config.scenario.t_end;
    let window_start = t_end - window - 1e-9;

    let mut per_filter = Vec::with_capacity(filters.len());
    for (fi, kind) in filters.iter().enumerate() {
        let mut error_runs: Vec<Vec<Vector64>> = Vec::new();
        let mut divergent_runs = 0;
        let mut coverage_inside = 0usize;
        let mut coverage_total = 0usize;
        let mut step_times: Vec<f64> = Vec::new();
        let mut saturated_steps = 0;
        let mut rank_warnings = 0;
        let mut raster: Option<SpikeRaster> = None;

        for (_, outputs, truth) in &runs {
            let out = &outputs[fi];
            debug_assert_eq!(out.kind, *kind);
            saturated_steps += out.saturated_steps;
            rank_warnings += out.rank_warnings;
            if out.diverged.is_some() {
                divergent_runs += 1;
                continue;
            }
            let errors: Vec<Vector64> = truth
                .iter()
                .zip(&out.estimates)
                .map(|(x, xh)| x - xh)
                .collect();
            if let Some(p_diags) = &out.p_diagonals {
                for (k, (e, p)) in errors.iter().zip(p_diags).enumerate() {
                    if times[k] >= window_start {
                        for i in 0..e.len() {
                            coverage_total += 1;
                            if e[i].abs() <= 3.0 * p[i].max(0.0).sqrt() {
                                coverage_inside += 1;
                            }
                        }
                    }
                }
            }
            step_times.extend_from_slice(&out.step_times);
            if raster.is_none() {
                raster = out.raster.clone();
            }
            error_runs.push(errors);
        }

        let rmse_series = rmse_from_error_runs(&error_runs);
        let n_x = scenario.model.n_x();
        let mut window_rmse = Vector64::from_element(n_x, f64::NAN);
        if !rmse_series.is_empty() {
            let mut acc = Vector64::zeros(n_x);
            let mut count = 0usize;
            for (k, r) in rmse_series.iter().enumerate() {
                if times[k] >= window_start {
                    acc += r;
                    count += 1;
                }
            }
            if count > 0 {
                window_rmse = acc / count as f64;
            }
        }
        let delta_x = combined_rmse(window_rmse.as_slice());

        step_times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let runtime_mean_ms = if step_times.is_empty() {
            f64::NAN
        } else {
            step_times.iter().sum::<f64>() / step_times.len() as f64 * 1e3
        };
        let runtime_p95_ms = percentile(&step_times, 0.95) * 1e3;

        let coverage = kind
            .has_covariance()
            .then(|| {
                if coverage_total == 0 {
                    f64::NAN
                } else {
                    coverage_inside as f64 / coverage_total as f64
                }
            });
        let spikes_total = raster.as_ref().map(|r| r.total_spikes());
        let spike_fraction = raster
            .as_ref()
            .map(|r| spike_efficiency(r.total_spikes(), r.n_neurons, r.steps));

        per_filter.push(FilterMetrics {
            kind: *kind,
            rmse_series,
            window_rmse,
            delta_x,
            coverage,
            spikes_total,
            spike_fraction,
            runtime_mean_ms,
            runtime_p95_ms,
            divergent_runs,
            included_runs: runs.len() - divergent_runs,
            saturated_steps,
            rank_warnings,
        });
    }

    // Rasters are attached by the caller, which still owns the run outputs.
    MetricsRecord {
        times,
        per_filter,
        mc_runs: runs.len(),
        steps,
        n_neurons,
        rasters: Vec::new(),
    }
}

/// Monte-Carlo batch over the scenario's configured run count: every run
/// simulates a fresh truth from its derived seed and feeds the same
/// trajectory to every filter. Divergent (run, filter) pairs are excluded
/// from the RMSE and counted. Runs execute in parallel.
pub fn monte_carlo(scenario: &Scenario) -> Result<MetricsRecord> {
    monte_carlo_with(scenario, None, None, None)
}

/// Monte-Carlo with optional neuron-count / run-count / filter-subset
/// overrides (used by sweeps and tests).
pub fn monte_carlo_with(
    scenario: &Scenario,
    n_neurons_override: Option<usize>,
    mc_runs_override: Option<usize>,
    filter_subset: Option<&[FilterKind]>,
) -> Result<MetricsRecord> {
    let mc_runs = mc_runs_override.unwrap_or(scenario.config.scenario.mc_runs);
    let filters: Vec<FilterKind> = scenario
        .config
        .scenario
        .filters
        .iter()
        .copied()
        .filter(|f| filter_subset.map_or(true, |s| s.contains(f)))
        .collect();
    if filters.is_empty() {
        return Err(Error::Config("no filters selected".into()));
    }

    let results: Vec<Result<(usize, Vec<FilterRunOutput>, Vec<Vector64>)>> = (0..mc_runs)
        .into_par_iter()
        .map(|run_idx| {
            let (trajectory, outputs) =
                run_single(scenario, run_idx, n_neurons_override, Some(&filters))?;
            Ok((run_idx, outputs, trajectory.states))
        })
        .collect();

    let mut runs = Vec::with_capacity(mc_runs);
    for r in results {
        runs.push(r?);
    }

    // All filters diverging in all runs is a fatal numerical failure.
    let all_diverged = runs.iter().all(|(_, outputs, _)| {
        outputs.iter().all(|o| o.diverged.is_some())
    });
    if all_diverged {
        return Err(Error::Divergence {
            step: 0,
            norm: f64::INFINITY,
        });
    }

    // Raster of the first included run per spiking filter.
    let mut rasters = Vec::new();
    for (fi, kind) in filters.iter().enumerate() {
        if !kind.is_snn() {
            continue;
        }
        if let Some(r) = runs
            .iter()
            .find_map(|(_, outputs, _)| outputs[fi].raster.clone())
        {
            rasters.push((*kind, r));
        }
    }

    let times: Vec<f64> = {
        let dt = scenario.config.scenario.dt;
        let steps = scenario.steps();
        (0..=steps).map(|k| k as f64 * dt).collect()
    };
    let mut record = aggregate_runs(scenario, times, runs, &filters, n_neurons_override.or(scenario.config.snn.as_ref().map(|s| s.n_neurons)));
    record.rasters = rasters;
    Ok(record)
}

/// One point of the neuron-count sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub kind: FilterKind,
    pub n_neurons: usize,
    pub delta_x: f64,
    pub divergent_runs: usize,
}

/// Full Monte-Carlo per neuron count for every spiking filter in the
/// scenario; returns the combined window RMSE per (filter, N).
pub fn neuron_sweep(scenario: &Scenario, n_values: &[usize]) -> Result<Vec<SweepPoint>> {
    let snn_filters: Vec<FilterKind> = scenario
        .config
        .scenario
        .filters
        .iter()
        .copied()
        .filter(FilterKind::is_snn)
        .collect();
    if snn_filters.is_empty() {
        return Err(Error::Config("neuron sweep needs spiking filters".into()));
    }
    let mc_runs = scenario
        .config
        .sweep
        .as_ref()
        .and_then(|s| s.mc_runs)
        .unwrap_or(scenario.config.scenario.mc_runs);

    let mut points = Vec::new();
    for &n in n_values {
        let record = monte_carlo_with(scenario, Some(n), Some(mc_runs), Some(&snn_filters))?;
        for metrics in &record.per_filter {
            points.push(SweepPoint {
                kind: metrics.kind,
                n_neurons: n,
                delta_x: metrics.delta_x,
                divergent_runs: metrics.divergent_runs,
            });
        }
    }
    Ok(points)
}

/// One row of the runtime profile.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub kind: FilterKind,
    pub n_neurons: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub steps: usize,
}

/// Per-step wall-time statistics for the three spiking filters per neuron
/// count, measured strictly serially on the calling thread. Each step's
/// time is the minimum across repetitions (floor noise removal) and the
/// reported mean/p95 are taken over steps. Filter-step work only; truth
/// simulation is excluded.
pub fn runtime_profile(
    scenario: &Scenario,
    n_values: &[usize],
    repetitions: usize,
) -> Result<Vec<ProfilePoint>> {
    let snn_filters = [
        FilterKind::SnnEkf,
        FilterKind::SnnEmsif,
        FilterKind::SnnEmsifStar,
    ];
    if scenario.config.snn.is_none() {
        return Err(Error::Config("runtime profile needs an [snn] section".into()));
    }
    let trajectory = scenario.simulate_run_truth(0)?;
    let run_seed = derive_seed(scenario.config.scenario.master_seed, 1);

    let steps = trajectory.steps();
    let dt = trajectory.dt;
    let mut points = Vec::new();
    for &n in n_values {
        let decoder = DecodingMatrix::<f64>::sample(
            scenario.model.n_x(),
            n,
            scenario.config.snn.as_ref().expect("validated").sigma_d,
            derive_seed(run_seed, STREAM_DECODER),
        )?;
        // The filters advance in lockstep and each trajectory step times all
        // of them back to back in rotating order, so machine phases
        // (frequency scaling, co-tenants) touch every filter alike. Each
        // step keeps its fastest repetition.
        let mut floors: Vec<Vec<f64>> = vec![vec![f64::INFINITY; steps]; snn_filters.len()];
        for rep in 0..repetitions.max(1) {
            let mut filters = Vec::with_capacity(snn_filters.len());
            for (idx, kind) in snn_filters.iter().enumerate() {
                let cfg = scenario.snn_config(
                    *kind,
                    n,
                    derive_seed(run_seed, STREAM_FILTER_BASE + idx as u64),
                );
                filters.push(SnnFilter::with_decoder(
                    cfg,
                    scenario.model.as_ref(),
                    decoder.clone(),
                    &scenario.x_hat0,
                    &scenario.p0,
                )?);
            }
            for k in 0..steps {
                for offset in 0..filters.len() {
                    let idx = (offset + rep + k) % filters.len();
                    let started = Instant::now();
                    filters[idx]
                        .step(
                            scenario.model.as_ref(),
                            &trajectory.inputs[k],
                            &trajectory.measurements[k + 1],
                            &scenario.noise_used,
                            dt,
                        )
                        .map_err(|e| e.at_step(k + 1))?;
                    let elapsed = started.elapsed().as_secs_f64();
                    let slot = &mut floors[idx][k];
                    *slot = slot.min(elapsed);
                }
            }
        }
        for (idx, kind) in snn_filters.iter().enumerate() {
            let floor = &floors[idx];
            let mut sorted = floor.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
            let mean_ms = floor.iter().sum::<f64>() / floor.len().max(1) as f64 * 1e3;
            points.push(ProfilePoint {
                kind: *kind,
                n_neurons: n,
                mean_ms,
                p95_ms: percentile(&sorted, 0.95) * 1e3,
                steps: floor.len(),
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use approx::assert_relative_eq;

    fn tiny_vdp_config(filters: &str, mc_runs: usize) -> ScenarioConfig {
        parse_config_str(
            &format!(
                r#"
[scenario]
name = "tiny"
system = "van_der_pol"
filters = [{filters}]
mc_runs = {mc_runs}
master_seed = 7
dt = 0.01
t_end = 2.0
rmse_window = 1.0

[van_der_pol]
mu = 0.005
x0 = [2.0, 2.0]
x_hat0 = [0.0, 0.0]
q_diag = [0.01, 0.01]
r_diag = [0.1]
p0_diag = [0.01, 0.01]

[snn]
n_neurons = 30
lambda = 0.5
delta = 0.05
sigma_d = 0.5
"#
            ),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn combined_rmse_cases() {
        assert_eq!(combined_rmse(&[0.0, 0.0]), 0.0);
        assert_eq!(combined_rmse(&[3.0, 4.0]), 5.0);
        assert_relative_eq!(
            combined_rmse(&[0.0043, 0.0046]),
            0.006296824596572466,
            epsilon = 1e-15
        );
    }

    #[test]
    fn spike_efficiency_cases() {
        assert_eq!(spike_efficiency(0, 100, 2000), 0.0);
        assert_relative_eq!(spike_efficiency(34_342, 100, 2000), 0.17171, epsilon = 1e-12);
        assert_eq!(spike_efficiency(200_000, 100, 2000), 1.0);
    }

    #[test]
    fn sigma_bounds_trivial_cases() {
        let zeros = vec![Vector64::zeros(2); 5];
        let p = vec![Vector64::from_element(2, 0.01); 5];
        assert_eq!(sigma_bounds_check(&zeros, &p), 1.0);

        let sigma: f64 = 0.1;
        let errors = vec![Vector64::from_element(2, 10.0 * sigma); 5];
        let p = vec![Vector64::from_element(2, sigma * sigma); 5];
        assert_eq!(sigma_bounds_check(&errors, &p), 0.0);
    }

    #[test]
    fn rmse_aggregation_is_pointwise_rms() {
        // M = 1, noiseless comparison: RMSE equals the absolute error.
        let e = vec![vec![
            Vector64::from_vec(vec![3.0, -4.0]),
            Vector64::from_vec(vec![0.5, 0.0]),
        ]];
        let rmse = rmse_from_error_runs(&e);
        assert_eq!(rmse[0], Vector64::from_vec(vec![3.0, 4.0]));
        assert_eq!(rmse[1], Vector64::from_vec(vec![0.5, 0.0]));
    }

    #[test]
    fn monte_carlo_matches_hand_aggregation_for_three_runs() {
        let config = tiny_vdp_config("\"ekf\", \"sif\", \"snn_emsif\"", 3);
        let scenario = Scenario::from_config(config).unwrap();
        let record = monte_carlo(&scenario).unwrap();

        // Rebuild the three runs by hand with the derived seeds.
        let mut error_runs_ekf = Vec::new();
        for run_idx in 0..3 {
            let (traj, outputs) = run_single(&scenario, run_idx, None, None).unwrap();
            let errors: Vec<Vector64> = traj
                .states
                .iter()
                .zip(&outputs[0].estimates)
                .map(|(x, xh)| x - xh)
                .collect();
            error_runs_ekf.push(errors);
        }
        let by_hand = rmse_from_error_runs(&error_runs_ekf);
        let from_record = &record.per_filter[0].rmse_series;
        assert_eq!(by_hand.len(), from_record.len());
        for (a, b) in by_hand.iter().zip(from_record) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 0.0);
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let config = tiny_vdp_config("\"emsif\", \"snn_emsif\"", 2);
        let scenario = Scenario::from_config(config.clone()).unwrap();
        let a = monte_carlo(&scenario).unwrap();
        let b = monte_carlo(&Scenario::from_config(config).unwrap()).unwrap();
        for (fa, fb) in a.per_filter.iter().zip(&b.per_filter) {
            assert_eq!(fa.window_rmse, fb.window_rmse);
            assert_eq!(fa.spikes_total, fb.spikes_total);
        }
    }

    #[test]
    fn aggregation_is_order_independent() {
        let config = tiny_vdp_config("\"ekf\"", 3);
        let scenario = Scenario::from_config(config).unwrap();
        let filters = [FilterKind::Ekf];
        let mut runs = Vec::new();
        for run_idx in 0..3 {
            let (traj, outputs) = run_single(&scenario, run_idx, None, None).unwrap();
            runs.push((run_idx, outputs, traj.states));
        }
        let times: Vec<f64> = (0..=scenario.steps()).map(|k| k as f64 * 0.01).collect();
        let forward = aggregate_runs(&scenario, times.clone(), runs.clone(), &filters, None);
        runs.reverse();
        let reversed = aggregate_runs(&scenario, times, runs, &filters, None);
        assert_eq!(
            forward.per_filter[0].window_rmse,
            reversed.per_filter[0].window_rmse
        );
        assert_eq!(
            forward.per_filter[0].rmse_series,
            reversed.per_filter[0].rmse_series
        );
    }

    #[test]
    fn excluding_divergent_runs_leaves_other_filters_alone() {
        let config = tiny_vdp_config("\"ekf\", \"emsif\"", 2);
        let scenario = Scenario::from_config(config).unwrap();
        let filters = [FilterKind::Ekf, FilterKind::Emsif];
        let mut runs = Vec::new();
        for run_idx in 0..2 {
            let (traj, outputs) = run_single(&scenario, run_idx, None, None).unwrap();
            runs.push((run_idx, outputs, traj.states));
        }
        let times: Vec<f64> = (0..=scenario.steps()).map(|k| k as f64 * 0.01).collect();
        let clean = aggregate_runs(&scenario, times.clone(), runs.clone(), &filters, None);

        // Mark run 1's EKF as divergent; EMSIF metrics must not move, and
        // the EKF divergence count must show up.
        runs[1].1[0].diverged = Some(5);
        runs[1].1[0].estimates.clear();
        let with_divergence = aggregate_runs(&scenario, times, runs, &filters, None);
        assert_eq!(with_divergence.per_filter[0].divergent_runs, 1);
        assert_eq!(with_divergence.per_filter[0].included_runs, 1);
        assert_eq!(
            clean.per_filter[1].rmse_series,
            with_divergence.per_filter[1].rmse_series
        );
    }

    #[test]
    fn derive_seed_streams_are_distinct() {
        let a = derive_seed(42, 1);
        let b = derive_seed(42, 2);
        let c = derive_seed(43, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 1));
    }

    #[test]
    fn sweep_produces_one_point_per_filter_per_n() {
        let mut config = tiny_vdp_config("\"snn_ekf\", \"snn_emsif\"", 1);
        config.sweep = Some(crate::config::SweepSection {
            n_values: vec![10, 20],
            mc_runs: Some(1),
        });
        let scenario = Scenario::from_config(config).unwrap();
        let points = neuron_sweep(&scenario, &[10, 20]).unwrap();
        assert_eq!(points.len(), 4);
    }

    #[test]
    fn profile_covers_all_three_spiking_kinds() {
        let config = tiny_vdp_config("\"snn_emsif\"", 1);
        let scenario = Scenario::from_config(config).unwrap();
        let points = runtime_profile(&scenario, &[10, 20], 2).unwrap();
        assert_eq!(points.len(), 6);
        assert!(points.iter().all(|p| p.mean_ms.is_finite() && p.mean_ms > 0.0));
        let kinds: std::collections::HashSet<_> = points.iter().map(|p| p.kind).collect();
        assert_eq!(kinds.len(), 3);
    }
}
