//! Fuzzy forest-fire risk assessment.
//!
//! [`fuzzy`] is a stateless Mamdani engine (fuzzification, FAM rule
//! evaluation, aggregation, centroid defuzzification). [`controller`] keeps
//! per-area same-day history and drives the engine once per measurement.
//! [`rulebase`] loads the versioned configuration both of them share.

pub mod controller;
pub mod fuzzy;
pub mod level;
pub mod measurement;
pub mod rulebase;

pub use controller::{AreaState, RiskAssessment, RiskController, Window};
pub use level::RiskLevel;
pub use measurement::{DeviceId, EnvVariable, Location, Measurement, Readings};
pub use rulebase::RuleBase;
