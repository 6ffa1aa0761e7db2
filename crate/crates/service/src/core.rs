//! Service state and the operations that change it.
//!
//! Every mutation follows the same path: validate against the current
//! state, build [`Record`]s, commit them to the [`EventLog`], then fold the
//! committed entries in with [`IngestCore::apply`]. Startup recovery calls
//! the same `apply` on the recovered entries, so a restarted core ends up
//! in the state the live one had after its last commit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use chrono::{DateTime, NaiveDate, Utc};
use firewatch_core::controller::{ControllerError, Declaration};
use firewatch_core::{
    AreaState, DeviceId, Measurement, Readings, RiskAssessment, RiskController, RiskLevel,
    RuleBase, Window,
};
use firewatch_crypto::envelope::OpenError;
use firewatch_crypto::{Envelope, PackageId, Registry};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::auth::{new_token, AuthError, AuthStore, Principal, Role, TokenRecord, UserConfig};
use crate::config::ServiceConfig;
use crate::log::{EventLog, LogEntry, Record, Recovery};

pub const MIN_PERIOD_SECONDS: u32 = 30;
pub const MAX_PERIOD_SECONDS: u32 = 3600;
const STREAM_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertState {
    Active,
    Superseded,
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRef {
    pub seq: u64,
    pub package_id: PackageId,
    pub device_id: DeviceId,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub alert_id: u64,
    pub area_id: String,
    pub level: RiskLevel,
    pub percentage: f64,
    pub created_at: DateTime<Utc>,
    pub measurement: MeasurementRef,
    pub state: AlertState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyState {
    Pending,
    Applied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyStatus {
    pub device_id: DeviceId,
    pub period_seconds: u32,
    pub state: FrequencyState,
    pub requested_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_at: Option<DateTime<Utc>>,
}

/// The parts of a [`RiskAssessment`] clients need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSummary {
    pub area_id: String,
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub percentage: f64,
    pub level: RiskLevel,
    pub window: Window,
    pub samples_averaged: usize,
    pub declaration_active: bool,
    pub last: Readings,
    pub averages: Readings,
    pub recommended_period_seconds: u32,
}

impl From<&RiskAssessment> for AssessmentSummary {
    fn from(a: &RiskAssessment) -> Self {
        Self {
            area_id: a.area_id.clone(),
            device_id: a.device_id.clone(),
            timestamp: a.timestamp,
            percentage: a.percentage,
            level: a.level,
            window: a.window,
            samples_averaged: a.samples_averaged,
            declaration_active: a.declaration_active,
            last: a.last,
            averages: a.averages,
            recommended_period_seconds: a.recommended_period_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoredMeasurement {
    pub seq: u64,
    pub package_id: PackageId,
    pub measurement: Measurement,
    pub assessment: Option<AssessmentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaSummary {
    pub area_id: String,
    pub current_level: RiskLevel,
    pub measurement_count: usize,
    pub last_assessment: Option<AssessmentSummary>,
    pub declaration: Option<Declaration>,
    pub declaration_active: bool,
    pub active_alert: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaDetail {
    #[serde(flatten)]
    pub summary: AreaSummary,
    /// Window the next assessment will use.
    pub next_window: Window,
    /// Today's measurements, oldest first, as the controller sees them.
    pub history: Vec<Measurement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Assessment,
    Alert,
    Declaration,
    Frequency,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Assessment => "assessment",
            Self::Alert => "alert",
            Self::Declaration => "declaration",
            Self::Frequency => "frequency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamEvent {
    pub seq: u64,
    pub kind: StreamKind,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum IngestOutcome {
    Accepted {
        seq: u64,
        package_id: PackageId,
        device_id: DeviceId,
        assessment: RiskAssessment,
        alerts: Vec<AlertRecord>,
    },
    Duplicate {
        package_id: PackageId,
        device_id: DeviceId,
    },
}

impl IngestOutcome {
    pub fn device_id(&self) -> &DeviceId {
        match self {
            Self::Accepted { device_id, .. } | Self::Duplicate { device_id, .. } => device_id,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("{0}")]
    Verification(String),
    #[error("one-time key {index} of device {device} was already used")]
    KeyReuse { device: DeviceId, index: u32 },
    #[error("invalid measurement: {0}")]
    InvalidPayload(String),
    #[error("{0}")]
    Stale(String),
    #[error("unknown area {0}")]
    UnknownArea(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl IngestError {
    pub fn status(&self) -> u16 {
        match self {
            Self::Malformed(_) | Self::InvalidPayload(_) | Self::BadRequest(_) => 400,
            Self::UnknownDevice(_) | Self::UnknownArea(_) => 404,
            Self::Verification(_) | Self::KeyReuse { .. } => 401,
            Self::Auth(AuthError::Forbidden(_)) => 403,
            Self::Auth(_) => 401,
            Self::Stale(_) => 409,
            Self::Storage(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed(_) => "malformed-envelope",
            Self::UnknownDevice(_) => "unknown-device",
            Self::Verification(_) => "verification-failed",
            Self::KeyReuse { .. } => "key-reuse",
            Self::InvalidPayload(_) => "invalid-measurement",
            Self::Stale(_) => "stale-measurement",
            Self::UnknownArea(_) => "unknown-area",
            Self::BadRequest(_) => "bad-request",
            Self::Auth(AuthError::Forbidden(_)) => "forbidden",
            Self::Auth(AuthError::BadCredentials) => "bad-credentials",
            Self::Auth(AuthError::Expired) => "token-expired",
            Self::Auth(_) => "unauthorized",
            Self::Storage(_) => "storage",
        }
    }
}

fn storage(e: std::io::Error) -> IngestError {
    IngestError::Storage(e.to_string())
}

#[derive(Debug, Clone)]
pub struct CoreOptions {
    pub token_ttl: chrono::Duration,
    pub replay_retention_days: u32,
}

impl Default for CoreOptions {
    fn default() -> Self {
        Self {
            token_ttl: chrono::Duration::hours(8),
            replay_retention_days: 7,
        }
    }
}

/// Package ids seen recently, bucketed by the UTC date of their measurement.
#[derive(Debug, Default)]
struct ReplayLedger {
    ids: HashMap<PackageId, NaiveDate>,
    by_day: BTreeMap<NaiveDate, Vec<PackageId>>,
}

impl ReplayLedger {
    fn contains(&self, id: &PackageId) -> bool {
        self.ids.contains_key(id)
    }

    fn insert(&mut self, id: PackageId, day: NaiveDate, retention_days: u32) {
        self.ids.insert(id, day);
        self.by_day.entry(day).or_default().push(id);
        let newest = *self.by_day.keys().next_back().unwrap();
        let cutoff = newest - chrono::Days::new(u64::from(retention_days));
        while let Some(entry) = self.by_day.first_entry() {
            if *entry.key() >= cutoff {
                break;
            }
            for id in entry.remove() {
                self.ids.remove(&id);
            }
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct RecoveryReport {
    pub entries: usize,
    pub truncated_bytes: u64,
    pub problem: Option<String>,
    /// Logged assessments that differed from their recomputation.
    pub mismatches: usize,
}

pub struct IngestCore {
    controller: RiskController,
    registry: Registry,
    auth: AuthStore,
    log: EventLog,
    options: CoreOptions,
    areas: BTreeMap<String, AreaState>,
    stored: BTreeMap<String, Vec<StoredMeasurement>>,
    alerts: BTreeMap<u64, AlertRecord>,
    active_alerts: BTreeMap<String, u64>,
    ledger: ReplayLedger,
    used_keys: HashSet<(DeviceId, u32)>,
    frequencies: BTreeMap<DeviceId, FrequencyStatus>,
    rejections: u64,
    last_seq: u64,
    recomputed: Option<(PackageId, RiskAssessment)>,
    mismatches: usize,
    events: Vec<StreamEvent>,
    stream: broadcast::Sender<StreamEvent>,
}

impl IngestCore {
    pub fn new(
        rules: Arc<RuleBase>,
        registry: Registry,
        users: Vec<UserConfig>,
        log: EventLog,
        options: CoreOptions,
    ) -> Self {
        Self {
            controller: RiskController::new(rules),
            registry,
            auth: AuthStore::new(users),
            log,
            options,
            areas: BTreeMap::new(),
            stored: BTreeMap::new(),
            alerts: BTreeMap::new(),
            active_alerts: BTreeMap::new(),
            ledger: ReplayLedger::default(),
            used_keys: HashSet::new(),
            frequencies: BTreeMap::new(),
            rejections: 0,
            last_seq: 0,
            recomputed: None,
            mismatches: 0,
            events: Vec::new(),
            stream: broadcast::channel(STREAM_CAPACITY).0,
        }
    }

    /// A core with an in-memory log and the shipped rule base.
    pub fn in_memory(registry: Registry, users: Vec<UserConfig>) -> Self {
        Self::new(
            Arc::new(RuleBase::shipped()),
            registry,
            users,
            EventLog::in_memory(),
            CoreOptions::default(),
        )
    }

    /// Opens the log at `path` and replays it.
    pub fn open(
        rules: Arc<RuleBase>,
        registry: Registry,
        users: Vec<UserConfig>,
        path: &Path,
        fsync: bool,
        options: CoreOptions,
    ) -> std::io::Result<(Self, RecoveryReport)> {
        let (log, recovery) = EventLog::open(path, fsync)?;
        let mut core = Self::new(rules, registry, users, log, options);
        let report = core.recover(recovery);
        Ok((core, report))
    }

    pub fn from_config(cfg: &ServiceConfig) -> anyhow::Result<(Self, RecoveryReport)> {
        let rules = match &cfg.rulebase_path {
            Some(p) => RuleBase::load(p)?,
            None => RuleBase::shipped(),
        };
        let registry = Registry::load(&cfg.registry_path)
            .with_context(|| format!("reading {}", cfg.registry_path.display()))?
            .service_view();
        if let Some(dir) = cfg.log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let options = CoreOptions {
            token_ttl: chrono::Duration::seconds(cfg.token_ttl_seconds as i64),
            replay_retention_days: cfg.replay_retention_days,
        };
        Self::open(
            Arc::new(rules),
            registry,
            cfg.users.clone(),
            &cfg.log_path,
            cfg.fsync,
            options,
        )
        .with_context(|| format!("opening {}", cfg.log_path.display()))
    }

    fn recover(&mut self, recovery: Recovery) -> RecoveryReport {
        let entries = recovery.entries.len();
        for e in recovery.entries {
            self.apply(e);
        }
        tracing::info!(entries, seq = self.last_seq, "event log replayed");
        RecoveryReport {
            entries,
            truncated_bytes: recovery.truncated_bytes,
            problem: recovery.problem,
            mismatches: self.mismatches,
        }
    }

    /// Folds one committed entry into the state.
    pub fn apply(&mut self, entry: LogEntry) {
        let seq = entry.seq;
        self.last_seq = seq;
        match entry.record {
            Record::Measurement {
                package_id,
                key_index,
                measurement,
            } => {
                self.ledger.insert(
                    package_id,
                    measurement.timestamp.date_naive(),
                    self.options.replay_retention_days,
                );
                self.used_keys
                    .insert((measurement.device_id.clone(), key_index));
                let state = self
                    .areas
                    .entry(measurement.area_id.clone())
                    .or_insert_with(|| AreaState::new(&measurement.area_id));
                match self.controller.assess(state, &measurement) {
                    Ok(a) => self.recomputed = Some((package_id, a)),
                    Err(e) => {
                        tracing::warn!(seq, error = %e, "logged measurement no longer assesses")
                    }
                }
                self.stored
                    .entry(measurement.area_id.clone())
                    .or_default()
                    .push(StoredMeasurement {
                        seq,
                        package_id,
                        measurement,
                        assessment: None,
                    });
            }
            Record::Assessment {
                package_id,
                assessment,
            } => {
                match self.recomputed.take() {
                    Some((id, ref a)) if id == package_id && *a == assessment => {}
                    _ => {
                        self.mismatches += 1;
                        tracing::warn!(seq, %package_id, "logged assessment differs from its recomputation; keeping the logged one");
                    }
                }
                if let Some(state) = self.areas.get_mut(&assessment.area_id) {
                    state.current_level = assessment.level;
                    state.last_assessment = Some(assessment.clone());
                }
                if let Some(m) = self
                    .stored
                    .get_mut(&assessment.area_id)
                    .and_then(|v| v.last_mut())
                {
                    m.assessment = Some(AssessmentSummary::from(&assessment));
                }
                self.publish(
                    seq,
                    StreamKind::Assessment,
                    serde_json::json!({
                        "package_id": package_id,
                        "assessment": AssessmentSummary::from(&assessment),
                    }),
                );
            }
            Record::Alert { alert } => {
                match alert.state {
                    AlertState::Active => {
                        self.active_alerts
                            .insert(alert.area_id.clone(), alert.alert_id);
                    }
                    _ => {
                        if self.active_alerts.get(&alert.area_id) == Some(&alert.alert_id) {
                            self.active_alerts.remove(&alert.area_id);
                        }
                    }
                }
                self.publish(
                    seq,
                    StreamKind::Alert,
                    serde_json::to_value(&alert).unwrap(),
                );
                self.alerts.insert(alert.alert_id, alert);
            }
            Record::Declaration {
                area_id,
                declaration,
                by,
            } => {
                let state = self
                    .areas
                    .entry(area_id.clone())
                    .or_insert_with(|| AreaState::new(&area_id));
                state.declaration = Some(declaration.clone());
                self.publish(
                    seq,
                    StreamKind::Declaration,
                    serde_json::json!({
                        "area_id": area_id,
                        "declaration": declaration,
                        "by": by,
                    }),
                );
            }
            Record::FrequencyChange {
                device_id,
                period_seconds,
                state,
                by,
            } => {
                let status = match (state, self.frequencies.get(&device_id)) {
                    (FrequencyState::Applied, Some(prev)) => FrequencyStatus {
                        state,
                        applied_at: Some(entry.at),
                        ..prev.clone()
                    },
                    _ => FrequencyStatus {
                        device_id: device_id.clone(),
                        period_seconds,
                        state,
                        requested_at: entry.at,
                        applied_at: (state == FrequencyState::Applied).then_some(entry.at),
                    },
                };
                self.publish(
                    seq,
                    StreamKind::Frequency,
                    serde_json::json!({
                        "device_id": device_id,
                        "period_seconds": status.period_seconds,
                        "state": status.state,
                        "by": by,
                    }),
                );
                self.frequencies.insert(device_id, status);
            }
            Record::Rejection { .. } => self.rejections += 1,
            Record::Token { token } => self.auth.insert_token(token),
        }
    }

    fn publish(&mut self, seq: u64, kind: StreamKind, data: serde_json::Value) {
        let ev = StreamEvent { seq, kind, data };
        self.events.push(ev.clone());
        let _ = self.stream.send(ev);
    }

    fn commit(
        &mut self,
        now: DateTime<Utc>,
        records: Vec<Record>,
    ) -> Result<Vec<LogEntry>, IngestError> {
        let entries = self.log.append(now, records).map_err(storage)?;
        for e in &entries {
            self.apply(e.clone());
        }
        Ok(entries)
    }

    fn reject(
        &mut self,
        now: DateTime<Utc>,
        err: IngestError,
        device: Option<&DeviceId>,
        package: Option<PackageId>,
    ) -> IngestError {
        tracing::warn!(status = err.status(), error = %err, "package rejected");
        let record = Record::Rejection {
            status: err.status(),
            code: err.code().into(),
            reason: err.to_string(),
            device_id: device.map(|d| d.to_string()),
            package_id: package,
        };
        if let Err(e) = self.commit(now, vec![record]) {
            tracing::error!(error = %e, "could not log rejection");
        }
        err
    }

    /// Verifies, assesses and persists one envelope.
    pub fn ingest(
        &mut self,
        now: DateTime<Utc>,
        bytes: &[u8],
    ) -> Result<IngestOutcome, IngestError> {
        let env = match Envelope::from_bytes(bytes) {
            Ok(e) => e,
            Err(e) => {
                return Err(self.reject(now, IngestError::Malformed(e.to_string()), None, None))
            }
        };
        let device = env.device_id().clone();
        let Some(keys) = self.registry.get(&device) else {
            let err = IngestError::UnknownDevice(device.to_string());
            return Err(self.reject(now, err, Some(&device), Some(env.package_id())));
        };
        let payload = match env.open(&keys.aes_key, &keys.merkle_root) {
            Ok(p) => p,
            Err(OpenError::Payload(msg)) => {
                return Err(self.reject(
                    now,
                    IngestError::InvalidPayload(msg),
                    Some(&device),
                    Some(env.package_id()),
                ))
            }
            Err(e) => {
                return Err(self.reject(
                    now,
                    IngestError::Verification(e.to_string()),
                    Some(&device),
                    Some(env.package_id()),
                ))
            }
        };
        let package_id = payload.package_id;
        if self.ledger.contains(&package_id) {
            return Ok(IngestOutcome::Duplicate {
                package_id,
                device_id: device,
            });
        }
        if self.used_keys.contains(&(device.clone(), env.key_index())) {
            let err = IngestError::KeyReuse {
                device: device.clone(),
                index: env.key_index(),
            };
            return Err(self.reject(now, err, Some(&device), Some(package_id)));
        }

        let m = payload.measurement;
        let mut state = self
            .areas
            .get(&m.area_id)
            .cloned()
            .unwrap_or_else(|| AreaState::new(&m.area_id));
        let assessment = match self.controller.assess(&mut state, &m) {
            Ok(a) => a,
            Err(e @ ControllerError::Stale { .. }) => {
                return Err(self.reject(
                    now,
                    IngestError::Stale(e.to_string()),
                    Some(&device),
                    Some(package_id),
                ))
            }
            Err(e) => {
                return Err(self.reject(
                    now,
                    IngestError::InvalidPayload(e.to_string()),
                    Some(&device),
                    Some(package_id),
                ))
            }
        };

        let mref = MeasurementRef {
            seq: self.log.next_seq(),
            package_id,
            device_id: device.clone(),
            timestamp: m.timestamp,
        };
        let alerts = self.alert_transitions(now, &assessment, mref);
        let mut records = vec![
            Record::Measurement {
                package_id,
                key_index: env.key_index(),
                measurement: m,
            },
            Record::Assessment {
                package_id,
                assessment: assessment.clone(),
            },
        ];
        records.extend(alerts.iter().cloned().map(|alert| Record::Alert { alert }));
        let entries = self.commit(now, records)?;
        Ok(IngestOutcome::Accepted {
            seq: entries[0].seq,
            package_id,
            device_id: device,
            assessment,
            alerts,
        })
    }

    fn alert_transitions(
        &self,
        now: DateTime<Utc>,
        a: &RiskAssessment,
        mref: MeasurementRef,
    ) -> Vec<AlertRecord> {
        let active = self
            .active_alerts
            .get(&a.area_id)
            .map(|id| &self.alerts[id]);
        let next_id = self.alerts.keys().next_back().map_or(1, |id| id + 1);
        match active {
            Some(cur) if a.level == RiskLevel::Nfr => {
                vec![AlertRecord {
                    state: AlertState::Cleared,
                    closed_at: Some(now),
                    ..cur.clone()
                }]
            }
            Some(cur) if a.level == cur.level => Vec::new(),
            None if a.level == RiskLevel::Nfr => Vec::new(),
            _ => {
                let mut out = Vec::new();
                if let Some(cur) = active {
                    out.push(AlertRecord {
                        state: AlertState::Superseded,
                        superseded_by: Some(next_id),
                        closed_at: Some(now),
                        ..cur.clone()
                    });
                }
                out.push(AlertRecord {
                    alert_id: next_id,
                    area_id: a.area_id.clone(),
                    level: a.level,
                    percentage: a.percentage,
                    created_at: now,
                    measurement: mref,
                    state: AlertState::Active,
                    supersedes: active.map(|c| c.alert_id),
                    superseded_by: None,
                    closed_at: None,
                });
                out
            }
        }
    }

    pub fn declare(
        &mut self,
        now: DateTime<Utc>,
        principal: &Principal,
        area_id: &str,
        level: RiskLevel,
        ttl: std::time::Duration,
    ) -> Result<Declaration, IngestError> {
        let mut state = self
            .areas
            .get(area_id)
            .cloned()
            .ok_or_else(|| IngestError::UnknownArea(area_id.into()))?;
        let declaration = self
            .controller
            .apply_declaration(&mut state, level, ttl, now)
            .map_err(|e| IngestError::BadRequest(e.to_string()))?;
        let record = Record::Declaration {
            area_id: area_id.into(),
            declaration: declaration.clone(),
            by: principal.username.clone(),
        };
        self.commit(now, vec![record])?;
        Ok(declaration)
    }

    pub fn set_frequency(
        &mut self,
        now: DateTime<Utc>,
        principal: &Principal,
        device: &DeviceId,
        period_seconds: u32,
    ) -> Result<FrequencyStatus, IngestError> {
        if self.registry.get(device).is_none() {
            return Err(IngestError::UnknownDevice(device.to_string()));
        }
        if !(MIN_PERIOD_SECONDS..=MAX_PERIOD_SECONDS).contains(&period_seconds) {
            return Err(IngestError::BadRequest(format!(
                "period {period_seconds} s outside [{MIN_PERIOD_SECONDS}, {MAX_PERIOD_SECONDS}]"
            )));
        }
        let record = Record::FrequencyChange {
            device_id: device.clone(),
            period_seconds,
            state: FrequencyState::Pending,
            by: Some(principal.username.clone()),
        };
        self.commit(now, vec![record])?;
        Ok(self.frequencies[device].clone())
    }

    /// Hands a pending period to a device that has made contact.
    pub fn collect_frequency(
        &mut self,
        now: DateTime<Utc>,
        device: &DeviceId,
    ) -> Result<Option<u32>, IngestError> {
        let Some(status) = self
            .frequencies
            .get(device)
            .filter(|s| s.state == FrequencyState::Pending)
        else {
            return Ok(None);
        };
        let period_seconds = status.period_seconds;
        let record = Record::FrequencyChange {
            device_id: device.clone(),
            period_seconds,
            state: FrequencyState::Applied,
            by: None,
        };
        self.commit(now, vec![record])?;
        Ok(Some(period_seconds))
    }

    pub fn frequency(&self, device: &DeviceId) -> Result<Option<&FrequencyStatus>, IngestError> {
        if self.registry.get(device).is_none() {
            return Err(IngestError::UnknownDevice(device.to_string()));
        }
        Ok(self.frequencies.get(device))
    }

    pub fn login(
        &mut self,
        now: DateTime<Utc>,
        username: &str,
        password: &str,
    ) -> Result<(String, TokenRecord), IngestError> {
        let role = self.auth.check_password(username, password)?;
        self.issue_token(now, username, role, self.options.token_ttl)
    }

    /// Mints a token; only its digest is logged.
    pub fn issue_token(
        &mut self,
        now: DateTime<Utc>,
        username: &str,
        role: Role,
        ttl: chrono::Duration,
    ) -> Result<(String, TokenRecord), IngestError> {
        if ttl <= chrono::Duration::zero() {
            return Err(IngestError::BadRequest("token ttl must be positive".into()));
        }
        let (token, digest) = new_token();
        let record = TokenRecord {
            digest,
            username: username.into(),
            role,
            expires_at: now + ttl,
        };
        self.commit(
            now,
            vec![Record::Token {
                token: record.clone(),
            }],
        )?;
        Ok((token, record))
    }

    pub fn authenticate(
        &self,
        token: Option<&str>,
        now: DateTime<Utc>,
        required: Role,
    ) -> Result<Principal, IngestError> {
        Ok(self.auth.authenticate(token, now, required)?)
    }

    pub fn token_ttl(&self) -> chrono::Duration {
        self.options.token_ttl
    }

    pub fn replace_registry(&mut self, registry: Registry) {
        self.registry = registry.service_view();
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn controller(&self) -> &RiskController {
        &self.controller
    }

    pub fn area_summary(&self, area_id: &str, now: DateTime<Utc>) -> Option<AreaSummary> {
        let state = self.areas.get(area_id)?;
        Some(AreaSummary {
            area_id: area_id.into(),
            current_level: state.current_level,
            measurement_count: self.stored.get(area_id).map_or(0, Vec::len),
            last_assessment: state.last_assessment.as_ref().map(AssessmentSummary::from),
            declaration: state.declaration.clone(),
            declaration_active: state.declaration_active(now),
            active_alert: self.active_alerts.get(area_id).copied(),
        })
    }

    pub fn areas(&self, now: DateTime<Utc>) -> Vec<AreaSummary> {
        self.areas
            .keys()
            .filter_map(|a| self.area_summary(a, now))
            .collect()
    }

    pub fn area_detail(&self, area_id: &str, now: DateTime<Utc>) -> Option<AreaDetail> {
        let state = self.areas.get(area_id)?;
        Some(AreaDetail {
            summary: self.area_summary(area_id, now)?,
            next_window: self
                .controller
                .window_size(state.current_level, state.declaration_active(now)),
            history: state.history.clone(),
        })
    }

    pub fn area_state(&self, area_id: &str) -> Option<&AreaState> {
        self.areas.get(area_id)
    }

    /// Measurements for an area in arrival order, filtered by measurement
    /// timestamp (`from` inclusive, `to` exclusive).
    pub fn measurements(
        &self,
        area_id: &str,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Option<impl Iterator<Item = &StoredMeasurement>> {
        self.areas.get(area_id)?;
        let all = self.stored.get(area_id).map_or(&[][..], Vec::as_slice);
        Some(all.iter().filter(move |s| {
            from.is_none_or(|f| s.measurement.timestamp >= f)
                && to.is_none_or(|t| s.measurement.timestamp < t)
        }))
    }

    pub fn alerts(&self, state: Option<AlertState>, area: Option<&str>) -> Vec<&AlertRecord> {
        self.alerts
            .values()
            .filter(|a| state.is_none_or(|s| a.state == s) && area.is_none_or(|ar| a.area_id == ar))
            .collect()
    }

    pub fn alert(&self, id: u64) -> Option<&AlertRecord> {
        self.alerts.get(&id)
    }

    /// Events after `after` plus a receiver for everything later. Taken
    /// together under one borrow, so nothing is missed or repeated.
    pub fn subscribe(&self, after: u64) -> (Vec<StreamEvent>, broadcast::Receiver<StreamEvent>) {
        let start = self.events.partition_point(|e| e.seq <= after);
        (self.events[start..].to_vec(), self.stream.subscribe())
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn rejections(&self) -> u64 {
        self.rejections
    }

    pub fn mismatches(&self) -> usize {
        self.mismatches
    }

    pub fn token_count(&self) -> usize {
        self.auth.token_count()
    }
}
