//! Artifact writers: RMSE / estimate / raster / sweep / profile CSVs, the
//! summary table, and the machine-readable run manifest.
//!
//! Every float is printed with 17 significant digits so CSV bodies are
//! byte-identical across reruns and diffable across platforms; wall-clock
//! timestamps appear only in the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::ScenarioConfig;
use crate::harness::{FilterRunOutput, MetricsRecord, ProfilePoint, SweepPoint};
use crate::neuro::SpikeRaster;
use crate::systems::Trajectory;
use crate::{Result, Vector64};

/// 17-significant-digit scientific form; round-trips f64 exactly.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(fmt_float)
        .collect::<Vec<_>>()
        .join(",")
}

/// Collects written artifact paths for the manifest.
pub struct ArtifactLog {
    dir: PathBuf,
    written: Vec<String>,
}

impl ArtifactLog {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `rmse_<filter>.csv`: time plus per-state ensemble RMSE.
    pub fn write_rmse(&mut self, record: &MetricsRecord) -> Result<()> {
        let n_x = record
            .per_filter
            .first()
            .map_or(0, |f| f.window_rmse.len());
        for metrics in &record.per_filter {
            let mut body = String::new();
            body.push('t');
            for i in 0..n_x {
                body.push_str(&format!(",rmse_x{}", i + 1));
            }
            body.push('\n');
            for (k, row) in metrics.rmse_series.iter().enumerate() {
                body.push_str(&fmt_float(record.times[k]));
                body.push(',');
                body.push_str(&join_floats(row.iter().copied()));
                body.push('\n');
            }
            self.write(&format!("rmse_{}.csv", metrics.kind), &body)?;
        }
        Ok(())
    }

    /// `summary.csv`: one row per filter with window RMSEs, combined
    /// delta_x, coverage, spike stats and divergence counts. Everything
    /// here is seed-determined, so the body is byte-identical across
    /// reruns; wall-clock runtime statistics live in `runtimes.csv`.
    pub fn write_summary(&mut self, record: &MetricsRecord) -> Result<()> {
        let n_x = record
            .per_filter
            .first()
            .map_or(0, |f| f.window_rmse.len());
        let mut body = String::from("filter");
        for i in 0..n_x {
            body.push_str(&format!(",window_rmse_x{}", i + 1));
        }
        body.push_str(
            ",delta_x,coverage,spikes_total,spike_fraction,divergent_runs,included_runs,saturated_steps,rank_warnings\n",
        );
        for m in &record.per_filter {
            body.push_str(m.kind.name());
            body.push(',');
            body.push_str(&join_floats(m.window_rmse.iter().copied()));
            body.push(',');
            body.push_str(&fmt_float(m.delta_x));
            body.push(',');
            body.push_str(&m.coverage.map(fmt_float).unwrap_or_default());
            body.push(',');
            body.push_str(&m.spikes_total.map(|s| s.to_string()).unwrap_or_default());
            body.push(',');
            body.push_str(&m.spike_fraction.map(fmt_float).unwrap_or_default());
            body.push_str(&format!(
                ",{},{},{},{}\n",
                m.divergent_runs, m.included_runs, m.saturated_steps, m.rank_warnings
            ));
        }
        self.write("summary.csv", &body)
    }

    /// `runtimes.csv`: wall-clock per-step statistics per filter. Like the
    /// manifest timestamp this is machine-dependent and excluded from the
    /// byte-identity guarantee. Runtimes measure filter-step work only.
    pub fn write_runtimes(&mut self, record: &MetricsRecord) -> Result<()> {
        let mut body = String::from(
            "# per-step wall time of filter work only; truth simulation excluded; machine-dependent\nfilter,runtime_mean_ms,runtime_p95_ms\n",
        );
        for m in &record.per_filter {
            body.push_str(&format!(
                "{},{},{}\n",
                m.kind.name(),
                fmt_float(m.runtime_mean_ms),
                fmt_float(m.runtime_p95_ms)
            ));
        }
        self.write("runtimes.csv", &body)
    }

    /// `raster_<filter>.csv`: run metadata header, then one
    /// `(step, neuron)` row per spike.
    pub fn write_rasters(&mut self, record: &MetricsRecord) -> Result<()> {
        for (kind, raster) in &record.rasters {
            self.write(&format!("raster_{kind}.csv"), &raster_body(raster))?;
        }
        Ok(())
    }

    /// `estimates_<filter>.csv`: per-sample estimate, truth and error.
    pub fn write_estimates(
        &mut self,
        trajectory: &Trajectory<f64>,
        outputs: &[FilterRunOutput],
    ) -> Result<()> {
        let n_x = trajectory.states.first().map_or(0, Vector64::len);
        for out in outputs {
            let mut body = String::from("t");
            for i in 0..n_x {
                body.push_str(&format!(",xhat_{}", i + 1));
            }
            for i in 0..n_x {
                body.push_str(&format!(",true_{}", i + 1));
            }
            for i in 0..n_x {
                body.push_str(&format!(",err_{}", i + 1));
            }
            body.push('\n');
            for (k, xh) in out.estimates.iter().enumerate() {
                let x = &trajectory.states[k];
                body.push_str(&fmt_float(trajectory.times[k]));
                body.push(',');
                body.push_str(&join_floats(xh.iter().copied()));
                body.push(',');
                body.push_str(&join_floats(x.iter().copied()));
                body.push(',');
                body.push_str(&join_floats(x.iter().zip(xh.iter()).map(|(a, b)| a - b)));
                body.push('\n');
            }
            self.write(&format!("estimates_{}.csv", out.kind), &body)?;
            if let Some(raster) = &out.raster {
                self.write(&format!("raster_{}.csv", out.kind), &raster_body(raster))?;
            }
        }
        Ok(())
    }

    /// `sweep.csv`: combined window RMSE per (filter, N).
    pub fn write_sweep(&mut self, points: &[SweepPoint]) -> Result<()> {
        let mut body = String::from("filter,n_neurons,delta_x,divergent_runs\n");
        for p in points {
            body.push_str(&format!(
                "{},{},{},{}\n",
                p.kind,
                p.n_neurons,
                fmt_float(p.delta_x),
                p.divergent_runs
            ));
        }
        self.write("sweep.csv", &body)
    }

    /// `profile.csv`: per-step runtime statistics per (filter, N).
    pub fn write_profile(&mut self, points: &[ProfilePoint]) -> Result<()> {
        let mut body = String::from(
            "# per-step wall time of filter work only; truth simulation excluded\nfilter,n_neurons,steps,mean_ms,p95_ms\n",
        );
        for p in points {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                p.kind,
                p.n_neurons,
                p.steps,
                fmt_float(p.mean_ms),
                fmt_float(p.p95_ms)
            ));
        }
        self.write("profile.csv", &body)
    }

    /// `manifest.json`: every artifact with the config hash, the master
    /// seed, and the fully resolved config echoed verbatim. The only
    /// timestamp of the output set lives here.
    pub fn write_manifest(&mut self, config: &ScenarioConfig) -> Result<()> {
        let config_toml = config.to_toml_string()?;
        let manifest = serde_json::json!({
            "scenario": config.scenario.name,
            "master_seed": config.scenario.master_seed,
            "config_sha256": config.sha256_hex()?,
            "created_unix_ms": SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            "artifacts": self.written,
            "config_toml": config_toml,
        });
        let body = serde_json::to_string_pretty(&manifest)
            .expect("manifest serialization cannot fail");
        fs::write(self.dir.join("manifest.json"), body)?;
        Ok(())
    }
}

fn raster_body(raster: &SpikeRaster) -> String {
    let mut body = format!(
        "# n_neurons={} dt={} steps={} total_spikes={}\nstep,neuron\n",
        raster.n_neurons,
        fmt_float(raster.dt),
        raster.steps,
        raster.total_spikes()
    );
    for (step, neuron) in &raster.events {
        body.push_str(&format!("{step},{neuron}\n"));
    }
    body
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for &x in &[0.0, 1.0, -3.5e-7, 0.17171, f64::MIN_POSITIVE, 12345.6789] {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn raster_header_carries_metadata() {
        let raster = SpikeRaster {
            n_neurons: 3,
            dt: 0.01,
            steps: 5,
            events: vec![(0, 1), (2, 0), (2, 0)],
        };
        let body = raster_body(&raster);
        assert!(body.starts_with("# n_neurons=3"));
        assert!(body.contains("total_spikes=3"));
        assert_eq!(body.lines().count(), 5);
    }
}
