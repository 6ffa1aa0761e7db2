//! Simulation traces: one JSON object per line, ordered by `seq`.
//!
//! Every record carries `seq`, `t_ms` (milliseconds since scenario start),
//! `time` (UTC), `node` (device id, or `service`) and `event`, plus
//! event-specific fields. `measured` records carry the full envelope as
//! standard base64, so a trace can be replayed into a live service.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use base64::Engine;
use chrono::{DateTime, Utc};
use firewatch_core::RiskLevel;
use firewatch_crypto::PackageId;
use serde::{Deserialize, Serialize};

use crate::link::AlertChange;
use crate::scenario::ActionSpec;

pub const SERVICE_NODE: &str = "service";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub t_ms: u64,
    pub time: DateTime<Utc>,
    pub node: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventKind {
    Measured {
        package: PackageId,
        area: String,
        ttl: u8,
        key_index: u32,
        envelope: String,
    },
    SentUplink {
        package: PackageId,
        origin: String,
    },
    Forwarded {
        package: PackageId,
        origin: String,
        ttl: u8,
        to: Vec<String>,
    },
    DroppedDuplicate {
        package: PackageId,
        origin: String,
    },
    DroppedTtl {
        package: PackageId,
        origin: String,
    },
    Buffered {
        package: PackageId,
        origin: String,
    },
    Retried {
        package: PackageId,
        origin: String,
    },
    Delivered {
        package: PackageId,
        origin: String,
        via: String,
    },
    Rejected {
        package: PackageId,
        origin: String,
        via: String,
        status: u16,
        reason: String,
    },
    Assessed {
        package: PackageId,
        area: String,
        level: RiskLevel,
        percentage: f64,
        window: String,
        samples_averaged: usize,
        declaration_active: bool,
    },
    Alert {
        area: String,
        alert_id: u64,
        level: RiskLevel,
        change: AlertChange,
    },
    FrequencyApplied {
        period_seconds: u32,
    },
    OperatorAction {
        action: ActionSpec,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

impl EventKind {
    pub fn package(&self) -> Option<PackageId> {
        match self {
            Self::Measured { package, .. }
            | Self::SentUplink { package, .. }
            | Self::Forwarded { package, .. }
            | Self::DroppedDuplicate { package, .. }
            | Self::DroppedTtl { package, .. }
            | Self::Buffered { package, .. }
            | Self::Retried { package, .. }
            | Self::Delivered { package, .. }
            | Self::Rejected { package, .. }
            | Self::Assessed { package, .. } => Some(*package),
            Self::Alert { .. } | Self::FrequencyApplied { .. } | Self::OperatorAction { .. } => {
                None
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Measured { .. } => "measured",
            Self::SentUplink { .. } => "sent-uplink",
            Self::Forwarded { .. } => "forwarded",
            Self::DroppedDuplicate { .. } => "dropped-duplicate",
            Self::DroppedTtl { .. } => "dropped-ttl",
            Self::Buffered { .. } => "buffered",
            Self::Retried { .. } => "retried",
            Self::Delivered { .. } => "delivered",
            Self::Rejected { .. } => "rejected",
            Self::Assessed { .. } => "assessed",
            Self::Alert { .. } => "alert",
            Self::FrequencyApplied { .. } => "frequency-applied",
            Self::OperatorAction { .. } => "operator-action",
        }
    }
}

/// Final state of an originated package, by precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Terminal {
    Delivered,
    Rejected,
    Buffered,
    DroppedTtl,
    Lost,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
}

impl SimTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self, String> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
        }
        Ok(Self { events })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }

    pub fn originated(&self) -> Vec<PackageId> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Measured { package, .. } => Some(*package),
                _ => None,
            })
            .collect()
    }

    /// `(package, envelope bytes, t_ms)` for every measured event, in order.
    pub fn envelopes(&self) -> Result<Vec<(PackageId, Vec<u8>, u64)>, base64::DecodeError> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Measured {
                    package, envelope, ..
                } => Some((package, envelope, e.t_ms)),
                _ => None,
            })
            .map(|(p, b64, t)| {
                Ok((
                    *p,
                    base64::engine::general_purpose::STANDARD.decode(b64)?,
                    t,
                ))
            })
            .collect()
    }

    pub fn deliveries(&self) -> BTreeMap<PackageId, usize> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if let EventKind::Delivered { package, .. } = e.kind {
                *out.entry(package).or_default() += 1;
            }
        }
        out
    }

    pub fn terminal_states(&self) -> BTreeMap<PackageId, Terminal> {
        let mut held: BTreeMap<(PackageId, &str), i64> = BTreeMap::new();
        let mut delivered = std::collections::BTreeSet::new();
        let mut rejected = std::collections::BTreeSet::new();
        let mut ttl = std::collections::BTreeSet::new();
        for e in &self.events {
            match &e.kind {
                EventKind::Buffered { package, .. } => {
                    *held.entry((*package, e.node.as_str())).or_default() += 1
                }
                EventKind::Retried { package, .. } => {
                    *held.entry((*package, e.node.as_str())).or_default() -= 1
                }
                EventKind::Delivered { package, .. } => {
                    delivered.insert(*package);
                }
                EventKind::Rejected { package, .. } => {
                    rejected.insert(*package);
                }
                EventKind::DroppedTtl { package, .. } => {
                    ttl.insert(*package);
                }
                _ => {}
            }
        }
        let buffered: std::collections::BTreeSet<_> = held
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|((p, _), _)| *p)
            .collect();
        self.originated()
            .into_iter()
            .map(|p| {
                let t = if delivered.contains(&p) {
                    Terminal::Delivered
                } else if rejected.contains(&p) {
                    Terminal::Rejected
                } else if buffered.contains(&p) {
                    Terminal::Buffered
                } else if ttl.contains(&p) {
                    Terminal::DroppedTtl
                } else {
                    Terminal::Lost
                };
                (p, t)
            })
            .collect()
    }
}
