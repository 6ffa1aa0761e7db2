//! Per-area risk controller.
//!
//! Each forest area keeps the measurements registered during the current
//! local day. Every new measurement is compared, variable by variable,
//! against the average of a window of that history whose length depends on
//! the risk detected so far (and on any active external declaration).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{
    aggregate, classify_level, defuzzify_centroid, fuzzify, infer, Activations, FuzzyError,
};
use crate::level::RiskLevel;
use crate::measurement::{EnvVariable, Measurement, MeasurementError, Readings};
use crate::rulebase::RuleBase;

/// How many of the most recent same-day samples are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub enum Window {
    All,
    Last(usize),
}

impl Window {
    /// Number of samples actually averaged when `available` exist.
    pub fn samples(self, available: usize) -> usize {
        match self {
            Window::All => available,
            Window::Last(n) => n.min(available),
        }
    }
}

impl Ord for Window {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Window::All, Window::All) => Ordering::Equal,
            (Window::All, _) => Ordering::Greater,
            (_, Window::All) => Ordering::Less,
            (Window::Last(a), Window::Last(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for Window {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::All => f.write_str("all"),
            Window::Last(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WindowRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<WindowRepr> for Window {
    type Error = String;
    fn try_from(r: WindowRepr) -> Result<Self, String> {
        match r {
            WindowRepr::Count(n) => Ok(Window::Last(n)),
            WindowRepr::Word(w) if w == "all" => Ok(Window::All),
            WindowRepr::Word(w) => Err(format!("window must be \"all\" or a count, got `{w}`")),
        }
    }
}

impl From<Window> for WindowRepr {
    fn from(w: Window) -> Self {
        match w {
            Window::All => WindowRepr::Word("all".into()),
            Window::Last(n) => WindowRepr::Count(n),
        }
    }
}

/// Empty history: there is nothing to average yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no prior measurements to average (cold start)")]
pub struct ColdStart;

/// Per-variable arithmetic mean over the `window` most recent readings.
pub fn compute_average(history: &[Readings], window: Window) -> Result<Readings, ColdStart> {
    let n = window.samples(history.len());
    if n == 0 {
        return Err(ColdStart);
    }
    let recent = &history[history.len() - n..];
    Ok(Readings::from_fn(|v| {
        recent.iter().map(|r| r.get(v)).sum::<f64>() / n as f64
    }))
}

/// Operator-declared risk that forces the shortest averaging window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub level: RiskLevel,
    pub declared_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

impl Declaration {
    pub fn is_active(&self, at: DateTime<Utc>) -> bool {
        at < self.expires_at
    }
}

/// Result of one controller cycle for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub area_id: String,
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub percentage: f64,
    pub level: RiskLevel,
    pub window: Window,
    pub samples_averaged: usize,
    pub declaration_active: bool,
    /// Crisp inputs after clamping into each universe.
    pub last: Readings,
    pub averages: Readings,
    pub activations: BTreeMap<EnvVariable, Activations>,
    pub aggregated: Activations,
    pub clamped: Vec<EnvVariable>,
    pub recommended_period_seconds: u32,
}

/// Mutable per-area state, owned by whoever serialises access to the area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaState {
    pub area_id: String,
    pub history: Vec<Measurement>,
    pub current_level: RiskLevel,
    pub declaration: Option<Declaration>,
    pub last_assessment: Option<RiskAssessment>,
    /// Newest accepted timestamp; survives day rollover.
    pub last_timestamp: Option<DateTime<Utc>>,
}

impl AreaState {
    pub fn new(area_id: impl Into<String>) -> Self {
        Self {
            area_id: area_id.into(),
            history: Vec::new(),
            current_level: RiskLevel::Nfr,
            declaration: None,
            last_assessment: None,
            last_timestamp: None,
        }
    }

    pub fn declaration_active(&self, at: DateTime<Utc>) -> bool {
        self.declaration.as_ref().is_some_and(|d| d.is_active(at))
    }

    /// Clears the day's history and prior risk. Declarations persist.
    pub fn rollover(&mut self) {
        self.history.clear();
        self.current_level = RiskLevel::Nfr;
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("measurement for area `{got}` fed to area `{expected}`")]
    WrongArea { expected: String, got: String },
    #[error("stale measurement: {got} is not after {last}")]
    Stale {
        last: DateTime<Utc>,
        got: DateTime<Utc>,
    },
    #[error("invalid measurement: {0}")]
    Invalid(#[from] MeasurementError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("a declaration must be above NFR")]
    NfrDeclaration,
    #[error("declaration ttl must be positive")]
    ZeroTtl,
}

/// Crisp pipeline output for one (last, average) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub percentage: f64,
    pub level: RiskLevel,
    pub activations: BTreeMap<EnvVariable, Activations>,
    pub aggregated: Activations,
    pub clamped: Vec<EnvVariable>,
    pub last: Readings,
    pub averages: Readings,
}

#[derive(Debug, Clone)]
pub struct RiskController {
    rules: Arc<RuleBase>,
}

impl RiskController {
    pub fn new(rules: Arc<RuleBase>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &RuleBase {
        &self.rules
    }

    pub fn window_size(&self, prior: RiskLevel, declaration_active: bool) -> Window {
        let w = self.rules.controller.window_for(prior);
        if declaration_active {
            w.min(Window::Last(self.rules.controller.declaration_window))
        } else {
            w
        }
    }

    pub fn recommended_cycle_period(&self, level: RiskLevel) -> Duration {
        Duration::from_secs(u64::from(self.rules.controller.period_for(level)))
    }

    fn offset(&self, area: &str) -> FixedOffset {
        let secs = self.rules.controller.utc_offset_minutes(area) * 60;
        FixedOffset::east_opt(secs).unwrap_or_else(|| FixedOffset::east_opt(0).unwrap())
    }

    pub fn local_day(&self, area: &str, t: DateTime<Utc>) -> NaiveDate {
        t.with_timezone(&self.offset(area)).date_naive()
    }

    /// Fuzzifies every variable of `last` and `avg`, runs each FAM, then
    /// aggregates and defuzzifies.
    pub fn evaluate(&self, last: &Readings, avg: &Readings) -> Result<Evaluation, FuzzyError> {
        let mut activations = BTreeMap::new();
        let mut clamped = Vec::new();
        let mut last_used = *last;
        let mut avg_used = *avg;
        for (v, rules) in self.rules.inputs() {
            let var = &rules.variable;
            let (x, was_clamped) = var.clamp(checked(v, last.get(v))?);
            let (a, _) = var.clamp(checked(v, avg.get(v))?);
            if was_clamped {
                clamped.push(v);
            }
            *last_used.get_mut(v) = x;
            *avg_used.get_mut(v) = a;
            let act = infer(&rules.fam, &fuzzify(var, x)?, &fuzzify(var, a)?);
            activations.insert(v, act);
        }
        let all: Vec<Activations> = activations.values().copied().collect();
        let agg = aggregate(&all, &self.rules.output, self.rules.aggregation)?;
        let percentage = defuzzify_centroid(&agg, self.rules.centroid_resolution);
        Ok(Evaluation {
            percentage,
            level: classify_level(percentage, &self.rules.output),
            activations,
            aggregated: agg.activations,
            clamped,
            last: last_used,
            averages: avg_used,
        })
    }

    /// Runs one controller cycle: rollover if the local day changed, pick
    /// the window, average, evaluate, then append `m` to the history.
    pub fn assess(
        &self,
        state: &mut AreaState,
        m: &Measurement,
    ) -> Result<RiskAssessment, ControllerError> {
        if m.area_id != state.area_id {
            return Err(ControllerError::WrongArea {
                expected: state.area_id.clone(),
                got: m.area_id.clone(),
            });
        }
        m.validate()?;
        if let Some(last) = state.last_timestamp {
            if m.timestamp <= last {
                return Err(ControllerError::Stale {
                    last,
                    got: m.timestamp,
                });
            }
        }
        if let Some(prev) = state.history.last() {
            if self.local_day(&state.area_id, prev.timestamp)
                != self.local_day(&state.area_id, m.timestamp)
            {
                state.rollover();
            }
        }

        let declaration_active = state.declaration_active(m.timestamp);
        let window = self.window_size(state.current_level, declaration_active);
        let series: Vec<Readings> = state.history.iter().map(|h| h.readings).collect();
        let samples_averaged = window.samples(series.len());
        let averages = compute_average(&series, window).unwrap_or(m.readings);

        let eval = self.evaluate(&m.readings, &averages)?;
        let assessment = RiskAssessment {
            area_id: state.area_id.clone(),
            device_id: m.device_id.to_string(),
            timestamp: m.timestamp,
            percentage: eval.percentage,
            level: eval.level,
            window,
            samples_averaged,
            declaration_active,
            last: eval.last,
            averages: eval.averages,
            activations: eval.activations,
            aggregated: eval.aggregated,
            clamped: eval.clamped,
            recommended_period_seconds: self.rules.controller.period_for(eval.level),
        };

        state.history.push(m.clone());
        state.last_timestamp = Some(m.timestamp);
        state.current_level = assessment.level;
        state.last_assessment = Some(assessment.clone());
        Ok(assessment)
    }

    /// Registers an external declaration; the newest one replaces any other.
    pub fn apply_declaration(
        &self,
        state: &mut AreaState,
        level: RiskLevel,
        ttl: Duration,
        now: DateTime<Utc>,
    ) -> Result<Declaration, ControllerError> {
        if level == RiskLevel::Nfr {
            return Err(ControllerError::NfrDeclaration);
        }
        if ttl.is_zero() {
            return Err(ControllerError::ZeroTtl);
        }
        let ttl = chrono::Duration::from_std(ttl).map_err(|_| ControllerError::ZeroTtl)?;
        let d = Declaration {
            level,
            declared_at: now,
            expires_at: now + ttl,
        };
        state.declaration = Some(d.clone());
        Ok(d)
    }
}

fn checked(v: EnvVariable, x: f64) -> Result<f64, FuzzyError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(FuzzyError::InvalidMeasurement {
            variable: v.to_string(),
            value: x,
        })
    }
}
