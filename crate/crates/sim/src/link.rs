use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use chrono::{DateTime, Utc};
use firewatch_core::{DeviceId, RiskLevel};
use firewatch_crypto::envelope::PackagePayload;
use firewatch_crypto::{Envelope, PackageId, Registry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentNote {
    pub area: String,
    pub level: RiskLevel,
    pub percentage: f64,
    pub window: String,
    pub samples_averaged: usize,
    pub declaration_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlertChange {
    Raised,
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertNote {
    pub alert_id: u64,
    pub area: String,
    pub level: RiskLevel,
    pub change: AlertChange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkResponse {
    Accepted {
        assessment: Option<AssessmentNote>,
        alerts: Vec<AlertNote>,
    },
    Duplicate,
    Rejected {
        status: u16,
        reason: String,
    },
}

/// What the simulated network talks to when a node has coverage.
pub trait ServiceLink {
    fn deliver(&mut self, now: DateTime<Utc>, envelope: &[u8]) -> LinkResponse;

    /// Cycle period waiting for `device`, collected on contact.
    fn poll_frequency(&mut self, _now: DateTime<Utc>, _device: &DeviceId) -> Option<u32> {
        None
    }

    fn declare(
        &mut self,
        _now: DateTime<Utc>,
        _area: &str,
        _level: RiskLevel,
        _ttl: Duration,
    ) -> Result<(), String> {
        Err("declarations not supported by this link".into())
    }

    fn set_frequency(
        &mut self,
        _now: DateTime<Utc>,
        _device: &DeviceId,
        _period_seconds: u32,
    ) -> Result<(), String> {
        Err("frequency changes not supported by this link".into())
    }
}

/// Verifies envelopes against a registry and suppresses replays, without
/// running the risk controller.
#[derive(Debug, Default)]
pub struct VerifyingLink {
    registry: Registry,
    seen: HashSet<PackageId>,
    used_keys: HashSet<(DeviceId, u32)>,
    pending: BTreeMap<DeviceId, u32>,
    pub accepted: Vec<PackagePayload>,
    pub declarations: Vec<(DateTime<Utc>, String, RiskLevel, Duration)>,
}

impl VerifyingLink {
    pub fn new(registry: Registry) -> Self {
        Self {
            registry,
            ..Default::default()
        }
    }
}

impl ServiceLink for VerifyingLink {
    fn deliver(&mut self, _now: DateTime<Utc>, bytes: &[u8]) -> LinkResponse {
        let env = match Envelope::from_bytes(bytes) {
            Ok(e) => e,
            Err(e) => {
                return LinkResponse::Rejected {
                    status: 400,
                    reason: e.to_string(),
                }
            }
        };
        let Some(keys) = self.registry.get(env.device_id()) else {
            return LinkResponse::Rejected {
                status: 404,
                reason: format!("unknown device {}", env.device_id()),
            };
        };
        let payload = match env.open(&keys.aes_key, &keys.merkle_root) {
            Ok(p) => p,
            Err(e) => {
                return LinkResponse::Rejected {
                    status: 401,
                    reason: e.to_string(),
                }
            }
        };
        if self.seen.contains(&payload.package_id) {
            return LinkResponse::Duplicate;
        }
        if !self
            .used_keys
            .insert((env.device_id().clone(), env.key_index()))
        {
            return LinkResponse::Rejected {
                status: 401,
                reason: "one-time key reused".into(),
            };
        }
        self.seen.insert(payload.package_id);
        self.accepted.push(payload);
        LinkResponse::Accepted {
            assessment: None,
            alerts: Vec::new(),
        }
    }

    fn poll_frequency(&mut self, _now: DateTime<Utc>, device: &DeviceId) -> Option<u32> {
        self.pending.remove(device)
    }

    fn declare(
        &mut self,
        now: DateTime<Utc>,
        area: &str,
        level: RiskLevel,
        ttl: Duration,
    ) -> Result<(), String> {
        self.declarations.push((now, area.to_string(), level, ttl));
        Ok(())
    }

    fn set_frequency(
        &mut self,
        _now: DateTime<Utc>,
        device: &DeviceId,
        period_seconds: u32,
    ) -> Result<(), String> {
        if self.registry.get(device).is_none() {
            return Err(format!("unknown device {device}"));
        }
        self.pending.insert(device.clone(), period_seconds);
        Ok(())
    }
}
