//! Scenario files.
//!
//! ```toml
//! seed = 7
//! start = "2026-07-15T06:00:00Z"
//! duration_seconds = 14400
//! period_seconds = 300        # default cycle period
//! neighbor_radius_m = 200.0
//! ttl = 8
//! hop_latency_ms = 50
//! key_pool_size = 1024
//!
//! [[nodes]]
//! device_id = "356938035643809"
//! area = "ridge"
//! lat = 40.4168
//! lon = -3.7038
//! phase_seconds = 0
//! coverage = { default = false, intervals = [{ from_seconds = 0, to_seconds = 600, uplink = true }] }
//!
//! [environment]
//! noise = 0.02
//! baseline = { temperature = 25.0, humidity = 50.0, wind_speed = 10.0, rainfall = 40.0, co2 = 300.0, co = 0.5, o2 = 21.0 }
//!
//! [[environment.fires]]
//! area = "ridge"
//! start_seconds = 8700
//! ramp_seconds = 3000
//! peak = { temperature = 45.0, co2 = 2000.0, co = 10.0, o2 = 18.0 }
//!
//! [[actions]]
//! kind = "declare"
//! at_seconds = 600
//! area = "ridge"
//! level = "HFR"
//! ttl_seconds = 7200
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use firewatch_core::{DeviceId, Location, Readings, RiskLevel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvironmentModel;

pub const MIN_PERIOD_SECONDS: u32 = 30;
pub const MAX_PERIOD_SECONDS: u32 = 3600;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment series {path}: {message}")]
    Series { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub duration_seconds: u64,
    #[serde(default = "defaults::period")]
    pub period_seconds: u32,
    #[serde(default = "defaults::radius")]
    pub neighbor_radius_m: f64,
    #[serde(default = "defaults::ttl")]
    pub ttl: u8,
    #[serde(default = "defaults::latency")]
    pub hop_latency_ms: u32,
    #[serde(default = "defaults::pool")]
    pub key_pool_size: usize,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
    /// Directory that relative series paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

mod defaults {
    pub fn period() -> u32 {
        300
    }
    pub fn radius() -> f64 {
        200.0
    }
    pub fn ttl() -> u8 {
        8
    }
    pub fn latency() -> u32 {
        50
    }
    pub fn pool() -> usize {
        firewatch_crypto::DEFAULT_POOL_SIZE
    }
    pub fn battery() -> f64 {
        100.0
    }
    pub fn covered() -> bool {
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub device_id: DeviceId,
    pub area: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default = "defaults::battery")]
    pub battery: f64,
    #[serde(default)]
    pub period_seconds: Option<u32>,
    #[serde(default)]
    pub phase_seconds: u32,
    #[serde(default)]
    pub coverage: CoverageSchedule,
}

impl NodeSpec {
    pub fn location(&self) -> Location {
        Location {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// Uplink availability over time. Intervals are left-closed
/// `[from, to)`; outside every interval `default` applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSchedule {
    #[serde(default = "defaults::covered")]
    pub default: bool,
    #[serde(default)]
    pub intervals: Vec<CoverageInterval>,
}

impl Default for CoverageSchedule {
    fn default() -> Self {
        Self {
            default: true,
            intervals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageInterval {
    pub from_seconds: u64,
    pub to_seconds: u64,
    pub uplink: bool,
}

impl CoverageSchedule {
    pub fn always() -> Self {
        Self::default()
    }

    pub fn never() -> Self {
        Self {
            default: false,
            intervals: Vec::new(),
        }
    }

    pub fn covered_at(&self, t_ms: u64) -> bool {
        self.intervals
            .iter()
            .find(|i| i.from_seconds * 1000 <= t_ms && t_ms < i.to_seconds * 1000)
            .map_or(self.default, |i| i.uplink)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut prev_end = 0;
        for (k, i) in self.intervals.iter().enumerate() {
            if i.from_seconds >= i.to_seconds {
                return Err(format!("coverage interval {k} is empty"));
            }
            if k > 0 && i.from_seconds < prev_end {
                return Err(format!("coverage interval {k} overlaps or is out of order"));
            }
            prev_end = i.to_seconds;
        }
        Ok(())
    }
}

/// Readings where every variable is optional, for overrides and fire peaks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialReadings {
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
    pub wind_speed: Option<f64>,
    pub rainfall: Option<f64>,
    pub co2: Option<f64>,
    pub co: Option<f64>,
    pub o2: Option<f64>,
}

impl PartialReadings {
    pub fn overlay(&self, base: &Readings) -> Readings {
        Readings {
            temperature: self.temperature.unwrap_or(base.temperature),
            humidity: self.humidity.unwrap_or(base.humidity),
            wind_speed: self.wind_speed.unwrap_or(base.wind_speed),
            rainfall: self.rainfall.unwrap_or(base.rainfall),
            co2: self.co2.unwrap_or(base.co2),
            co: self.co.unwrap_or(base.co),
            o2: self.o2.unwrap_or(base.o2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    #[serde(default = "EnvironmentSpec::default_baseline")]
    pub baseline: Readings,
    /// Per-area baseline overrides.
    #[serde(default)]
    pub areas: BTreeMap<String, PartialReadings>,
    /// Multiplicative noise bound: each value is scaled by `1 + U(-noise, noise)`.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub fires: Vec<FireSpec>,
    #[serde(default)]
    pub series: Vec<SeriesSpec>,
}

impl EnvironmentSpec {
    pub fn default_baseline() -> Readings {
        Readings {
            temperature: 25.0,
            humidity: 50.0,
            wind_speed: 10.0,
            rainfall: 40.0,
            co2: 300.0,
            co: 0.5,
            o2: 21.0,
        }
    }
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            baseline: Self::default_baseline(),
            areas: BTreeMap::new(),
            noise: 0.0,
            fires: Vec::new(),
            series: Vec::new(),
        }
    }
}

/// Linear drift from the underlying value to `peak` over
/// `[start, start + ramp]`, held afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireSpec {
    pub area: String,
    pub start_seconds: u64,
    pub ramp_seconds: u64,
    pub peak: PartialReadings,
}

/// CSV with header `offset_seconds,temperature,humidity,wind_speed,rainfall,co2,co,o2`;
/// each row holds until the next one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub area: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ActionSpec {
    Declare {
        at_seconds: u64,
        area: String,
        level: RiskLevel,
        ttl_seconds: u64,
    },
    SetFrequency {
        at_seconds: u64,
        device_id: DeviceId,
        period_seconds: u32,
    },
}

impl ActionSpec {
    pub fn at_seconds(&self) -> u64 {
        match self {
            Self::Declare { at_seconds, .. } | Self::SetFrequency { at_seconds, .. } => *at_seconds,
        }
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.into(),
            source,
        })?;
        let mut s = Self::from_toml_str(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    /// Parses and validates structure; series files are read by
    /// [`Scenario::environment_model`].
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes.is_empty() {
            return Err(invalid("no nodes"));
        }
        if self.duration_seconds == 0 {
            return Err(invalid("duration_seconds must be positive"));
        }
        if !(self.neighbor_radius_m.is_finite() && self.neighbor_radius_m > 0.0) {
            return Err(invalid("neighbor_radius_m must be positive"));
        }
        firewatch_crypto::keys::check_pool_size(self.key_pool_size)
            .map_err(|e| invalid(e.to_string()))?;
        check_period(self.period_seconds)?;
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(&n.device_id) {
                return Err(invalid(format!("duplicate device {}", n.device_id)));
            }
            if n.area.is_empty() {
                return Err(invalid(format!("device {} has an empty area", n.device_id)));
            }
            if !(n.lat.is_finite()
                && n.lon.is_finite()
                && n.lat.abs() <= 90.0
                && n.lon.abs() <= 180.0)
            {
                return Err(invalid(format!(
                    "device {} has an invalid position",
                    n.device_id
                )));
            }
            if !(0.0..=100.0).contains(&n.battery) {
                return Err(invalid(format!(
                    "device {} battery outside [0, 100]",
                    n.device_id
                )));
            }
            if let Some(p) = n.period_seconds {
                check_period(p)?;
            }
            n.coverage
                .validate()
                .map_err(|e| invalid(format!("device {}: {e}", n.device_id)))?;
        }
        let env = &self.environment;
        if !(0.0..1.0).contains(&env.noise) {
            return Err(invalid("noise must be in [0, 1)"));
        }
        for f in &env.fires {
            if f.ramp_seconds == 0 {
                return Err(invalid(format!("fire in {} has a zero ramp", f.area)));
            }
        }
        for a in &self.actions {
            match a {
                ActionSpec::Declare {
                    level, ttl_seconds, ..
                } => {
                    if *level == RiskLevel::Nfr || *ttl_seconds == 0 {
                        return Err(invalid(
                            "declarations need a level above NFR and a positive ttl",
                        ));
                    }
                }
                ActionSpec::SetFrequency { device_id, .. } if !ids.contains(device_id) => {
                    return Err(invalid(format!(
                        "frequency action for unknown device {device_id}"
                    )));
                }
                ActionSpec::SetFrequency { .. } => {}
            }
        }
        Ok(())
    }

    pub fn device_ids(&self) -> Vec<DeviceId> {
        self.nodes.iter().map(|n| n.device_id.clone()).collect()
    }

    pub fn environment_model(&self) -> Result<EnvironmentModel, ScenarioError> {
        EnvironmentModel::from_spec(&self.environment, &self.base_dir)
    }
}

fn check_period(p: u32) -> Result<(), ScenarioError> {
    if !(MIN_PERIOD_SECONDS..=MAX_PERIOD_SECONDS).contains(&p) {
        return Err(invalid(format!(
            "period {p} s outside [{MIN_PERIOD_SECONDS}, {MAX_PERIOD_SECONDS}]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
start = "2026-07-15T00:00:00Z"
duration_seconds = 600

[[nodes]]
device_id = "356938035643809"
area = "ridge"
lat = 40.0
lon = -3.0
"#;

    #[test]
    fn defaults_apply() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.ttl, 8);
        assert_eq!(s.period_seconds, 300);
        assert_eq!(s.neighbor_radius_m, 200.0);
        assert!(s.nodes[0].coverage.covered_at(0));
        assert_eq!(s.environment.baseline.co2, 300.0);
    }

    #[test]
    fn coverage_intervals_are_left_closed() {
        let c = CoverageSchedule {
            default: false,
            intervals: vec![CoverageInterval {
                from_seconds: 10,
                to_seconds: 20,
                uplink: true,
            }],
        };
        assert!(!c.covered_at(9_999));
        assert!(c.covered_at(10_000));
        assert!(c.covered_at(19_999));
        assert!(!c.covered_at(20_000));
    }

    #[test]
    fn rejects_bad_scenarios() {
        let dup = format!("{MINIMAL}\n[[nodes]]\ndevice_id = \"356938035643809\"\narea = \"x\"\nlat = 0.0\nlon = 0.0\n");
        assert!(matches!(
            Scenario::from_toml_str(&dup),
            Err(ScenarioError::Invalid(_))
        ));
        let period = MINIMAL.replace(
            "duration_seconds = 600",
            "duration_seconds = 600\nperiod_seconds = 5",
        );
        assert!(Scenario::from_toml_str(&period).is_err());
        let unknown = MINIMAL.replace("seed = 1", "seed = 1\nsped = 2");
        assert!(matches!(
            Scenario::from_toml_str(&unknown),
            Err(ScenarioError::Parse(_))
        ));
        let overlap = MINIMAL.to_string()
            + "coverage = { intervals = [{ from_seconds = 0, to_seconds = 10, uplink = true }, { from_seconds = 5, to_seconds = 20, uplink = false }] }\n";
        assert!(Scenario::from_toml_str(&overlap).is_err());
    }

    #[test]
    fn actions_parse() {
        let text = format!(
            "{MINIMAL}\n[[actions]]\nkind = \"declare\"\nat_seconds = 60\narea = \"ridge\"\nlevel = \"HFR\"\nttl_seconds = 600\n\
             [[actions]]\nkind = \"set-frequency\"\nat_seconds = 0\ndevice_id = \"356938035643809\"\nperiod_seconds = 60\n"
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s.actions.len(), 2);
        assert_eq!(s.actions[0].at_seconds(), 60);
    }
}
