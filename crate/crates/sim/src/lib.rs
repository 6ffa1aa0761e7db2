//! Discrete-event simulation of a forest sensor network.
//!
//! Nodes run measurement cycles, sign and encrypt each measurement, and
//! either upload it directly or flood it to radio neighbours when they lack
//! coverage. Every node remembers the package ids it has handled, so each
//! package crosses each node at most once. A [`ServiceLink`] stands in for
//! the ingestion service.
//!
//! Runs are single-threaded and reproducible: one event queue ordered by
//! `(time, insertion order)` and one pseudo-random stream per scenario seed.

pub mod engine;
pub mod environment;
pub mod link;
pub mod network;
pub mod node;
pub mod scenario;
pub mod topology;
pub mod trace;

pub use engine::{generate_keys, run_scenario, NodeCredentials, SimError};
pub use link::{AlertChange, AlertNote, AssessmentNote, LinkResponse, ServiceLink, VerifyingLink};
pub use node::{Decision, NodeState};
pub use scenario::{Scenario, ScenarioError};
pub use trace::{EventKind, SimTrace, Terminal, TraceEvent};
