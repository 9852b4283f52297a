//! The fleet configuration document (TOML).
//!
//! Every section is optional; missing keys take their defaults, unknown keys
//! are rejected. [`FleetConfig::to_toml`] writes the effective configuration
//! with every default filled in, and loading that text reproduces the same
//! configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControllerConfig;
use crate::endpoint::{EndpointPorts, PlantParams};
use crate::fabric::{build_fabric, DelayModel, LinkProfile, Topology};
use crate::fleet::{Geofence, LetterGeometry, MissionPlan, SessionThresholds};
use crate::localization::{LocalizationMode, MapParams, OracleNoise};
use crate::wire::DEFAULT_FRAME_BYTES;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DronesConfig {
    pub count: usize,
    pub plant: PlantParams,
    pub ports: EndpointPorts,
    pub video_fps: f64,
    pub frame_bytes: usize,
}

impl Default for DronesConfig {
    fn default() -> Self {
        Self {
            count: 3,
            plant: PlantParams::default(),
            ports: EndpointPorts::default(),
            video_fps: 30.0,
            frame_bytes: DEFAULT_FRAME_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinksConfig {
    /// Fleet host to relay.
    pub wired: LinkProfile,
    /// Relay to drone.
    pub wireless: LinkProfile,
    /// Forwarding inside each relay.
    pub forward: DelayModel,
}

impl Default for LinksConfig {
    fn default() -> Self {
        Self {
            wired: LinkProfile::calibrated_wired(),
            wireless: LinkProfile::calibrated_wireless(),
            forward: DelayModel::shifted_lognormal(0.03, 0.034, 0.08),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub mode: LocalizationMode,
    pub noise: OracleNoise,
    pub rate_cap_hz: f64,
    pub map: MapParams,
    /// Per-axis noise on the odometry fed to the sequential estimator, m/s.
    pub odom_noise: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            mode: LocalizationMode::Mle,
            noise: OracleNoise::default(),
            rate_cap_hz: 10.8,
            map: MapParams::default(),
            odom_noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub name: String,
    pub geometry: LetterGeometry,
    pub arrival_radius: f64,
    pub dwell: f64,
    pub thresholds: SessionThresholds,
    pub geofence: Geofence,
    /// Give up on the mission after this long.
    pub timeout_s: f64,
    /// A trial fails once any localization error reaches this.
    pub success_threshold_m: f64,
    pub assoc_tol_ms: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            name: "ntu".into(),
            geometry: LetterGeometry::default(),
            arrival_radius: 0.1,
            dwell: 0.5,
            thresholds: SessionThresholds::default(),
            geofence: Geofence::default(),
            timeout_s: 120.0,
            success_threshold_m: 0.5,
            assoc_tol_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub probes: usize,
    pub probe_interval_s: f64,
    pub probe_payload_bytes: usize,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { probes: 10_000, probe_interval_s: 0.1, probe_payload_bytes: 64, trials: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub seed: u64,
    pub clock: ClockMode,
    pub drones: DronesConfig,
    pub links: LinksConfig,
    pub controller: ControllerConfig,
    pub localization: LocalizationConfig,
    pub mission: MissionConfig,
    pub bench: BenchConfig,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clock: ClockMode::Virtual,
            drones: DronesConfig::default(),
            links: LinksConfig::default(),
            controller: ControllerConfig::default(),
            localization: LocalizationConfig::default(),
            mission: MissionConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl FleetConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: FleetConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn topology(&self) -> Topology {
        let mut topo = Topology::uniform(
            self.drones.count,
            self.links.wired.clone(),
            self.links.wireless.clone(),
            self.links.forward,
        );
        for relay in topo.relays.iter_mut() {
            relay.port_map = [self.drones.ports.command, self.drones.ports.telemetry, self.drones.ports.video]
                .iter()
                .map(|&p| (p, p))
                .collect();
        }
        topo
    }

    pub fn mission_plan(&self) -> Result<MissionPlan, ConfigError> {
        let m = &self.mission;
        MissionPlan::letters(&m.name, self.drones.count, &m.geometry, m.arrival_radius, m.dwell)
            .map_err(|e| ConfigError::Invalid(format!("mission: {e}")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, why: String| Err(ConfigError::Invalid(format!("{field}: {why}")));
        if self.drones.count == 0 || self.drones.count > 200 {
            return bad("drones.count", format!("{} not in 1..=200", self.drones.count));
        }
        if !self.drones.plant.is_valid() {
            return bad("drones.plant", "time constants and scales must be positive".into());
        }
        if !(self.drones.video_fps > 0.0 && self.drones.video_fps <= 120.0) {
            return bad("drones.video_fps", format!("{} not in (0, 120]", self.drones.video_fps));
        }
        if self.drones.frame_bytes == 0 {
            return bad("drones.frame_bytes", "must be positive".into());
        }
        if let Err(e) = self.controller.limits.validate() {
            return bad("controller.limits", e.to_string());
        }
        if !self.controller.gains.is_valid() || !self.controller.coeffs.is_valid() {
            return bad("controller", "gains and filter coefficients must be finite and non-negative".into());
        }
        if !(self.controller.rate_hz > 0.0 && self.controller.rate_hz <= 120.0) {
            return bad("controller.rate_hz", format!("{} not in (0, 120]", self.controller.rate_hz));
        }
        if let Err(e) = self.localization.noise.validate() {
            return bad("localization.noise", e.to_string());
        }
        if let Err(e) = self.localization.map.validate() {
            return bad("localization.map", e.to_string());
        }
        if self.localization.rate_cap_hz.is_nan() || self.localization.rate_cap_hz <= 0.0 {
            return bad("localization.rate_cap_hz", "must be positive".into());
        }
        if self.localization.odom_noise.is_nan() || self.localization.odom_noise < 0.0 {
            return bad("localization.odom_noise", "must be non-negative".into());
        }
        let m = &self.mission;
        if !(m.timeout_s > 0.0 && m.success_threshold_m > 0.0 && m.assoc_tol_ms > 0.0 && m.arrival_radius > 0.0 && m.dwell >= 0.0) {
            return bad("mission", "timeout, thresholds and radius must be positive".into());
        }
        self.mission_plan()?
            .validate(&m.geofence)
            .map_err(|e| ConfigError::Invalid(format!("mission: {e}")))?;
        if self.bench.probe_interval_s <= 0.0 {
            return bad("bench.probe_interval_s", "must be positive".into());
        }
        build_fabric(&self.topology(), self.seed).map_err(|e| ConfigError::Invalid(format!("links: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(FleetConfig::from_toml("").unwrap(), FleetConfig::default());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = FleetConfig { seed: 77, ..FleetConfig::default() };
        c.links.wireless = c.links.wireless.clone().with_periodic_outage(8.0, 10.0, 2.0).with_loss(0.01);
        c.localization.mode = LocalizationMode::Map;
        let text = c.to_toml();
        assert_eq!(FleetConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = FleetConfig::from_toml("[drones]\ncount = 3\ncolour = \"red\"\n").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = FleetConfig::from_toml("[drones]\ncount = 0\n").unwrap_err().to_string();
        assert!(err.contains("drones.count"), "{err}");
        let err = FleetConfig::from_toml("[links.wireless]\ndelay_min_ms = 5.0\ndelay_mean_ms = 1.0\ndelay_max_ms = 9.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("links"), "{err}");
    }
}
