use std::time::Duration;

use chrono::{DateTime, Utc};
use firewatch_core::{DeviceId, RiskLevel};
use firewatch_service::core::AlertState;
use firewatch_service::{AlertRecord, IngestCore, IngestOutcome, Principal, Role};
use firewatch_sim::link::{AlertChange, AlertNote, AssessmentNote, LinkResponse, ServiceLink};

/// Connects the simulator directly to an in-process [`IngestCore`].
pub struct CoreLink {
    core: IngestCore,
    operator: Principal,
}

impl CoreLink {
    pub fn new(core: IngestCore) -> Self {
        let operator = Principal {
            username: "scenario".into(),
            role: Role::Operator,
            expires_at: DateTime::<Utc>::MAX_UTC,
        };
        Self { core, operator }
    }

    pub fn core(&self) -> &IngestCore {
        &self.core
    }

    pub fn into_core(self) -> IngestCore {
        self.core
    }
}

fn alert_note(a: &AlertRecord) -> Option<AlertNote> {
    let change = match a.state {
        AlertState::Active => AlertChange::Raised,
        AlertState::Cleared => AlertChange::Cleared,
        AlertState::Superseded => return None,
    };
    Some(AlertNote {
        alert_id: a.alert_id,
        area: a.area_id.clone(),
        level: a.level,
        change,
        supersedes: a.supersedes,
    })
}

impl ServiceLink for CoreLink {
    fn deliver(&mut self, now: DateTime<Utc>, envelope: &[u8]) -> LinkResponse {
        match self.core.ingest(now, envelope) {
            Ok(IngestOutcome::Accepted {
                assessment: a,
                alerts,
                ..
            }) => LinkResponse::Accepted {
                assessment: Some(AssessmentNote {
                    area: a.area_id,
                    level: a.level,
                    percentage: a.percentage,
                    window: a.window.to_string(),
                    samples_averaged: a.samples_averaged,
                    declaration_active: a.declaration_active,
                }),
                alerts: alerts.iter().filter_map(alert_note).collect(),
            },
            Ok(IngestOutcome::Duplicate { .. }) => LinkResponse::Duplicate,
            Err(e) => LinkResponse::Rejected {
                status: e.status(),
                reason: e.to_string(),
            },
        }
    }

    fn poll_frequency(&mut self, now: DateTime<Utc>, device: &DeviceId) -> Option<u32> {
        self.core
            .collect_frequency(now, device)
            .unwrap_or_else(|e| {
                tracing::warn!(error = %e, "could not hand out pending frequency");
                None
            })
    }

    fn declare(
        &mut self,
        now: DateTime<Utc>,
        area: &str,
        level: RiskLevel,
        ttl: Duration,
    ) -> Result<(), String> {
        self.core
            .declare(now, &self.operator, area, level, ttl)
            .map(drop)
            .map_err(|e| e.to_string())
    }

    fn set_frequency(
        &mut self,
        now: DateTime<Utc>,
        device: &DeviceId,
        period_seconds: u32,
    ) -> Result<(), String> {
        self.core
            .set_frequency(now, &self.operator, device, period_seconds)
            .map(drop)
            .map_err(|e| e.to_string())
    }
}
