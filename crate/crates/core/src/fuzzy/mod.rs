//! Stateless Mamdani inference.
//!
//! Conventions: min implication, max combination inside a rule table, and
//! centroid defuzzification over the `[0, 100] %` risk universe. Nothing in
//! here holds mutable state, so every function is safe to call concurrently
//! over a shared [`crate::RuleBase`].

mod fam;
mod inference;
mod membership;
mod variable;

pub use fam::FamTable;
pub use inference::{
    aggregate, classify_level, defuzzify_centroid, infer, Activations, AggregatedOutput,
    Aggregation, DEFAULT_RESOLUTION, MIN_RESOLUTION,
};
pub use membership::{membership, MembershipFunction};
pub use variable::{fuzzify, FuzzifiedValue, LinguisticVariable, Term, Universe};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuzzyError {
    #[error("invalid measurement for `{variable}`: {value} is not finite")]
    InvalidMeasurement { variable: String, value: f64 },
    #[error("unknown term `{term}` for `{variable}`")]
    UnknownTerm { variable: String, term: String },
    #[error("aggregation needs at least one assessed variable")]
    EmptyAggregation,
    #[error("invalid fuzzy configuration: {0}")]
    Config(String),
}
