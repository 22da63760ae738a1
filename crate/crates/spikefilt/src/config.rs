//! Scenario configuration: a strict key-value (TOML) schema covering every
//! shipped experiment. Unknown keys are fatal — a silent typo in `delta` or
//! `lambda` would invalidate any comparison the harness produces.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::filters::GainRule;
use crate::neuro::SnnFilterKind;
use crate::scn::SpikeMode;
use crate::systems::CwVariant;
use crate::{Error, Result};

/// Which estimator a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Ekf,
    Emsif,
    Sif,
    SnnEkf,
    SnnEmsif,
    SnnEmsifStar,
}

impl FilterKind {
    pub fn is_snn(&self) -> bool {
        matches!(
            self,
            FilterKind::SnnEkf | FilterKind::SnnEmsif | FilterKind::SnnEmsifStar
        )
    }

    pub fn snn_kind(&self) -> Option<SnnFilterKind> {
        match self {
            FilterKind::SnnEkf => Some(SnnFilterKind::SnnEkf),
            FilterKind::SnnEmsif => Some(SnnFilterKind::SnnEmsif),
            FilterKind::SnnEmsifStar => Some(SnnFilterKind::SnnEmsifStar),
            _ => None,
        }
    }

    /// Gain rule for the classical kinds.
    pub fn gain_rule(&self, delta: f64) -> Option<GainRule<f64>> {
        match self {
            FilterKind::Ekf => Some(GainRule::Kalman),
            FilterKind::Emsif => Some(GainRule::Msif { delta }),
            FilterKind::Sif => Some(GainRule::Sif { delta }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Emsif => "emsif",
            FilterKind::Sif => "sif",
            FilterKind::SnnEkf => "snn_ekf",
            FilterKind::SnnEmsif => "snn_emsif",
            FilterKind::SnnEmsifStar => "snn_emsif_star",
        }
    }

    /// Keeps a covariance, so 3σ coverage is defined.
    pub fn has_covariance(&self) -> bool {
        !matches!(self, FilterKind::SnnEmsifStar)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    VanDerPol,
    Rendezvous,
}

impl SystemKind {
    pub fn n_x(&self) -> usize {
        match self {
            SystemKind::VanDerPol => 2,
            SystemKind::Rendezvous => 6,
        }
    }

    pub fn n_z(&self) -> usize {
        match self {
            SystemKind::VanDerPol => 1,
            SystemKind::Rendezvous => 3,
        }
    }

    fn default_rmse_window(&self) -> f64 {
        match self {
            SystemKind::VanDerPol => 10.0,
            SystemKind::Rendezvous => 60.0,
        }
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    0.0
}

fn default_spike_mode() -> SpikeMode {
    SpikeMode::Sequential
}

fn default_cw_variant() -> CwVariant {
    CwVariant::Paper
}

fn default_profile_n() -> Vec<usize> {
    vec![50, 100, 300]
}

fn default_repetitions() -> usize {
    3
}

fn default_false() -> bool {
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub system: SystemKind,
    pub filters: Vec<FilterKind>,
    pub mc_runs: usize,
    pub master_seed: u64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_one")]
    pub alpha_q: f64,
    #[serde(default = "default_one")]
    pub alpha_r: f64,
    /// Length of the trailing window the summary averages over; defaults to
    /// 10 s (Van der Pol) or 60 s (rendezvous).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Clip negative covariance eigenvalues to zero after each Riccati step
    /// (safety valve, off by default).
    #[serde(default = "default_false")]
    pub clip_covariance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanDerPolSection {
    pub mu: f64,
    pub x0: Vec<f64>,
    pub x_hat0: Vec<f64>,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub p0_diag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RendezvousSection {
    pub r_o_km: f64,
    pub mu_earth: f64,
    #[serde(default = "default_cw_variant")]
    pub cw_variant: CwVariant,
    pub x0: Vec<f64>,
    pub x_hat0: Vec<f64>,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub p0_diag: Vec<f64>,
    /// 3x6 controller gain, row by row, applied as u = −K·x.
    pub k_ctrl: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnSection {
    pub n_neurons: usize,
    pub lambda: f64,
    pub delta: f64,
    pub sigma_d: f64,
    #[serde(default = "default_eta")]
    pub eta_sigma: f64,
    #[serde(default = "default_spike_mode")]
    pub spike_mode: SpikeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_values: Vec<usize>,
    /// Monte-Carlo runs per sweep point; defaults to the scenario's count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilencingSection {
    /// Fraction of the network silenced (lowest indices first).
    pub fraction: f64,
    pub onset_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default = "default_profile_n")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

/// Fully described experiment. [`parse_config`] returns this with optional
/// keys resolved, and the manifest embeds the resolved form verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub van_der_pol: Option<VanDerPolSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendezvous: Option<RendezvousSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snn: Option<SnnSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silencing: Option<SilencingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
}

fn check_dims(name: &str, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(Error::Config(format!(
            "{name} must have {expected} entries, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} must be finite")));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Fill documented defaults (window length, output directory) in place.
    /// The default window is clamped to the horizon for short runs.
    pub fn resolve_defaults(&mut self) {
        let window = self
            .scenario
            .rmse_window
            .unwrap_or_else(|| self.scenario.system.default_rmse_window().min(self.scenario.t_end));
        self.scenario.rmse_window = Some(window);
        if self.scenario.output_dir.is_none() {
            self.scenario.output_dir = Some(format!("out/{}", self.scenario.name));
        }
    }

    pub fn rmse_window(&self) -> f64 {
        self.scenario
            .rmse_window
            .unwrap_or_else(|| self.scenario.system.default_rmse_window().min(self.scenario.t_end))
    }

    pub fn output_dir(&self) -> String {
        self.scenario
            .output_dir
            .clone()
            .unwrap_or_else(|| format!("out/{}", self.scenario.name))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.name.is_empty() {
            return Err(Error::Config("scenario name must not be empty".into()));
        }
        if s.filters.is_empty() {
            return Err(Error::Config("filter list must not be empty".into()));
        }
        for (i, f) in s.filters.iter().enumerate() {
            if s.filters[..i].contains(f) {
                return Err(Error::Config(format!("duplicate filter '{f}'")));
            }
        }
        if s.mc_runs == 0 {
            return Err(Error::Config("mc_runs must be >= 1".into()));
        }
        if !(s.alpha_q > 0.0) || !(s.alpha_r > 0.0) {
            return Err(Error::Config("alpha_q and alpha_r must be > 0".into()));
        }
        if !(s.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if s.t_end < s.dt {
            return Err(Error::Config("t_end must cover at least one step".into()));
        }
        if let Some(w) = s.rmse_window {
            if !(w > 0.0) || w > s.t_end {
                return Err(Error::Config("rmse_window must be in (0, t_end]".into()));
            }
        }

        let n_x = s.system.n_x();
        let n_z = s.system.n_z();
        match s.system {
            SystemKind::VanDerPol => {
                if self.rendezvous.is_some() {
                    return Err(Error::Config(
                        "system is van_der_pol but a [rendezvous] section is present".into(),
                    ));
                }
                let sec = self
                    .van_der_pol
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [van_der_pol] section".into()))?;
                if !sec.mu.is_finite() {
                    return Err(Error::Config("mu must be finite".into()));
                }
                check_dims("x0", &sec.x0, n_x)?;
                check_dims("x_hat0", &sec.x_hat0, n_x)?;
                check_dims("q_diag", &sec.q_diag, n_x)?;
                check_dims("r_diag", &sec.r_diag, n_z)?;
                check_dims("p0_diag", &sec.p0_diag, n_x)?;
                validate_noise_diags(&sec.q_diag, &sec.r_diag, &sec.p0_diag)?;
            }
            SystemKind::Rendezvous => {
                if self.van_der_pol.is_some() {
                    return Err(Error::Config(
                        "system is rendezvous but a [van_der_pol] section is present".into(),
                    ));
                }
                let sec = self
                    .rendezvous
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [rendezvous] section".into()))?;
                if !(sec.r_o_km > 0.0) {
                    return Err(Error::Config("r_o_km must be > 0".into()));
                }
                if !(sec.mu_earth > 0.0) {
                    return Err(Error::Config("mu_earth must be > 0".into()));
                }
                check_dims("x0", &sec.x0, n_x)?;
                check_dims("x_hat0", &sec.x_hat0, n_x)?;
                check_dims("q_diag", &sec.q_diag, n_x)?;
                check_dims("r_diag", &sec.r_diag, n_z)?;
                check_dims("p0_diag", &sec.p0_diag, n_x)?;
                validate_noise_diags(&sec.q_diag, &sec.r_diag, &sec.p0_diag)?;
                if sec.k_ctrl.len() != 3 {
                    return Err(Error::Config("k_ctrl must have 3 rows".into()));
                }
                for row in &sec.k_ctrl {
                    check_dims("k_ctrl row", row, n_x)?;
                }
            }
        }

        let needs_snn = s.filters.iter().any(FilterKind::is_snn);
        let needs_delta = s.filters.iter().any(|f| {
            matches!(
                f,
                FilterKind::Emsif | FilterKind::Sif | FilterKind::SnnEmsif | FilterKind::SnnEmsifStar
            )
        });
        match (&self.snn, needs_snn) {
            (None, true) => {
                return Err(Error::Config(
                    "spiking filters requested but no [snn] section".into(),
                ))
            }
            (Some(snn), _) => {
                if snn.n_neurons < n_x {
                    return Err(Error::Config(format!(
                        "n_neurons must be >= state dimension {n_x}"
                    )));
                }
                if snn.lambda < 0.0 {
                    return Err(Error::Config("lambda must be >= 0".into()));
                }
                if needs_delta && !(snn.delta > 0.0) {
                    return Err(Error::Config("delta must be > 0".into()));
                }
                if !(snn.sigma_d > 0.0) {
                    return Err(Error::Config("sigma_d must be > 0".into()));
                }
                if snn.eta_sigma < 0.0 {
                    return Err(Error::Config("eta_sigma must be >= 0".into()));
                }
            }
            (None, false) => {
                if needs_delta {
                    return Err(Error::Config(
                        "sliding filters requested but no [snn] section carries delta".into(),
                    ));
                }
            }
        }

        if let Some(sweep) = &self.sweep {
            if sweep.n_values.is_empty() {
                return Err(Error::Config("sweep n_values must not be empty".into()));
            }
            if sweep.n_values.iter().any(|&n| n < n_x) {
                return Err(Error::Config(format!(
                    "every sweep neuron count must be >= {n_x}"
                )));
            }
            if sweep.mc_runs == Some(0) {
                return Err(Error::Config("sweep mc_runs must be >= 1".into()));
            }
        }
        if let Some(sil) = &self.silencing {
            if !(0.0..=1.0).contains(&sil.fraction) {
                return Err(Error::Config("silencing fraction must be in [0, 1]".into()));
            }
            if !(0.0..=s.t_end).contains(&sil.onset_time) {
                return Err(Error::Config("silencing onset must be in [0, t_end]".into()));
            }
        }
        if let Some(profile) = &self.profile {
            if profile.n_values.is_empty() {
                return Err(Error::Config("profile n_values must not be empty".into()));
            }
            if profile.n_values.iter().any(|&n| n < n_x) {
                return Err(Error::Config(format!(
                    "every profile neuron count must be >= {n_x}"
                )));
            }
            if profile.repetitions == 0 {
                return Err(Error::Config("profile repetitions must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Canonical TOML form of the (resolved) config; the manifest embeds
    /// this string and its hash.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("could not serialize config: {e}")))
    }

    pub fn sha256_hex(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }
}

fn validate_noise_diags(q: &[f64], r: &[f64], p0: &[f64]) -> Result<()> {
    if q.iter().any(|&v| v < 0.0) {
        return Err(Error::Config("q_diag entries must be >= 0".into()));
    }
    if r.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config("r_diag entries must be > 0".into()));
    }
    if p0.iter().any(|&v| v < 0.0) {
        return Err(Error::Config("p0_diag entries must be >= 0".into()));
    }
    Ok(())
}

/// Parse a config string (exposed for the manifest round trip).
pub fn parse_config_str(text: &str, origin: &str) -> Result<ScenarioConfig> {
    let mut config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        detail: e.to_string(),
    })?;
    config.resolve_defaults();
    config.validate()?;
    Ok(config)
}

/// Strict parse of a scenario config file; returns the resolved config.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_vdp() -> String {
        r#"
[scenario]
name = "t"
system = "van_der_pol"
filters = ["ekf", "emsif"]
mc_runs = 2
master_seed = 1
dt = 0.01
t_end = 1.0

[van_der_pol]
mu = 0.005
x0 = [2.0, 2.0]
x_hat0 = [0.0, 0.0]
q_diag = [0.01, 0.01]
r_diag = [0.1]
p0_diag = [0.01, 0.01]

[snn]
n_neurons = 10
lambda = 0.5
delta = 0.05
sigma_d = 0.5
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config_str(&minimal_vdp(), "test").unwrap();
        assert_eq!(cfg.scenario.alpha_q, 1.0);
        // Default 10 s window clamps to the 1 s horizon.
        assert_eq!(cfg.rmse_window(), 1.0);
        assert_eq!(cfg.output_dir(), "out/t");
        assert_eq!(cfg.snn.as_ref().unwrap().spike_mode, SpikeMode::Sequential);

        let long = minimal_vdp().replace("t_end = 1.0", "t_end = 20.0");
        let cfg = parse_config_str(&long, "test").unwrap();
        assert_eq!(cfg.rmse_window(), 10.0);
    }

    #[test]
    fn unknown_key_is_fatal() {
        let text = minimal_vdp().replace("mu = 0.005", "mu = 0.005\nmeow = 1.0");
        let err = parse_config_str(&text, "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("meow"), "unexpected message: {msg}");
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = minimal_vdp().replace("master_seed = 1\n", "");
        let err = parse_config_str(&text, "test").unwrap_err();
        assert!(err.to_string().contains("master_seed"));
    }

    #[test]
    fn empty_file_lists_required_table() {
        let err = parse_config_str("", "test").unwrap_err();
        assert!(err.to_string().contains("scenario"));
    }

    #[test]
    fn type_mismatch_carries_location() {
        let text = minimal_vdp().replace("dt = 0.01", "dt = \"soon\"");
        let err = parse_config_str(&text, "somefile.cfg").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("somefile.cfg"));
        assert!(msg.contains("line"), "no line info in: {msg}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = minimal_vdp().replace("x0 = [2.0, 2.0]", "x0 = [2.0, 2.0, 2.0]");
        assert!(parse_config_str(&text, "test").is_err());
    }

    #[test]
    fn snn_filters_require_snn_section() {
        let mut text = minimal_vdp().replace(
            "filters = [\"ekf\", \"emsif\"]",
            "filters = [\"snn_ekf\"]",
        );
        let snn_start = text.find("[snn]").unwrap();
        text.truncate(snn_start);
        assert!(parse_config_str(&text, "test").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = parse_config_str(&minimal_vdp(), "test").unwrap();
        let echoed = cfg.to_toml_string().unwrap();
        let reparsed = parse_config_str(&echoed, "echo").unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn duplicate_filters_rejected() {
        let text = minimal_vdp().replace(
            "filters = [\"ekf\", \"emsif\"]",
            "filters = [\"ekf\", \"ekf\"]",
        );
        assert!(parse_config_str(&text, "test").is_err());
    }
}
