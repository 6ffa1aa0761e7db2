//! Ingestion service for sensor packages.
//!
//! [`IngestCore`] holds all state and is a pure fold over the append-only
//! [`EventLog`]: live requests build log records, commit them, then apply
//! them exactly as recovery does on startup. [`http`] exposes the core over
//! HTTP with a server-sent event stream.

pub mod auth;
pub mod clock;
pub mod config;
pub mod core;
pub mod http;
pub mod log;

pub use crate::auth::{Principal, Role};
pub use crate::clock::{Clock, ManualClock, SystemClock};
pub use crate::config::ServiceConfig;
pub use crate::core::{AlertRecord, AlertState, IngestCore, IngestError, IngestOutcome};
pub use crate::log::{EventLog, LogEntry, Record};
