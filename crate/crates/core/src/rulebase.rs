//! Versioned rule-base configuration.
//!
//! One TOML document holds the output variable, one linguistic variable and
//! FAM table per environmental input, and the controller settings. See
//! `config/default-rulebase.toml` for the shipped defaults and
//! `docs/rulebase.md` for the schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::Window;
use crate::fuzzy::{
    Aggregation, FamTable, FuzzyError, LinguisticVariable, Term, Universe, DEFAULT_RESOLUTION,
    MIN_RESOLUTION,
};
use crate::level::RiskLevel;
use crate::measurement::EnvVariable;

pub const SCHEMA_VERSION: u32 = 1;

const SHIPPED: &str = include_str!("../../../config/default-rulebase.toml");

#[derive(Debug, Error)]
pub enum RuleBaseError {
    #[error("cannot read rule base {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("rule base is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported rule base version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("invalid rule base: {0}")]
    Invalid(String),
}

/// Linguistic variable and rule table for one environmental input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRules {
    pub variable: LinguisticVariable,
    pub fam: FamTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaConfig {
    pub id: String,
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub windows: BTreeMap<RiskLevel, Window>,
    pub declaration_window: usize,
    pub cycle_periods: BTreeMap<RiskLevel, u32>,
    #[serde(default)]
    pub default_utc_offset_minutes: i32,
    #[serde(default)]
    pub areas: Vec<AreaConfig>,
}

impl ControllerConfig {
    pub fn window_for(&self, level: RiskLevel) -> Window {
        self.windows.get(&level).copied().unwrap_or(Window::All)
    }

    pub fn period_for(&self, level: RiskLevel) -> u32 {
        self.cycle_periods.get(&level).copied().unwrap_or(300)
    }

    pub fn utc_offset_minutes(&self, area: &str) -> i32 {
        self.areas
            .iter()
            .find(|a| a.id == area)
            .map_or(self.default_utc_offset_minutes, |a| a.utc_offset_minutes)
    }

    fn validate(&self) -> Result<(), RuleBaseError> {
        for l in RiskLevel::ALL {
            if !self.windows.contains_key(&l) {
                return Err(RuleBaseError::Invalid(format!(
                    "controller.windows lacks {l}"
                )));
            }
            match self.cycle_periods.get(&l) {
                Some(p) if *p > 0 => {}
                _ => {
                    return Err(RuleBaseError::Invalid(format!(
                        "controller.cycle_periods lacks a positive {l}"
                    )))
                }
            }
        }
        if self.declaration_window == 0 || self.windows.values().any(|w| *w == Window::Last(0)) {
            return Err(RuleBaseError::Invalid(
                "windows must average at least one sample".into(),
            ));
        }
        for a in &self.areas {
            if a.utc_offset_minutes.abs() >= 24 * 60 {
                return Err(RuleBaseError::Invalid(format!(
                    "area `{}` has an impossible UTC offset",
                    a.id
                )));
            }
        }
        Ok(())
    }
}

/// Complete, validated fuzzy configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBase {
    pub version: u32,
    pub aggregation: Aggregation,
    pub centroid_resolution: usize,
    pub output: LinguisticVariable,
    inputs: BTreeMap<EnvVariable, InputRules>,
    pub controller: ControllerConfig,
}

impl RuleBase {
    /// The default rule base compiled into the crate.
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED).expect("shipped rule base is valid")
    }

    pub fn shipped_source() -> &'static str {
        SHIPPED
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RuleBaseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RuleBaseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RuleBaseError> {
        let raw: RawRuleBase = toml::from_str(text)?;
        raw.build()
    }

    pub fn input(&self, v: EnvVariable) -> &InputRules {
        // `build` guarantees all seven inputs are present.
        &self.inputs[&v]
    }

    pub fn inputs(&self) -> impl Iterator<Item = (EnvVariable, &InputRules)> {
        self.inputs.iter().map(|(k, v)| (*k, v))
    }

    pub fn fam(&self, v: EnvVariable) -> &FamTable {
        &self.input(v).fam
    }

    pub fn variable(&self, v: EnvVariable) -> &LinguisticVariable {
        &self.input(v).variable
    }

    /// Replaces one input's variable, keeping its table; used to explore
    /// alternative breakpoints.
    pub fn with_variable(
        mut self,
        v: EnvVariable,
        var: LinguisticVariable,
    ) -> Result<Self, RuleBaseError> {
        var.validate()?;
        let rules = self.inputs.get_mut(&v).expect("all inputs present");
        if var.term_names() != rules.fam.rows {
            return Err(RuleBaseError::Invalid(format!(
                "`{v}` terms must match its FAM"
            )));
        }
        rules.variable = var;
        Ok(self)
    }

    pub fn with_aggregation(mut self, mode: Aggregation) -> Self {
        self.aggregation = mode;
        self
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleBase {
    version: u32,
    #[serde(default)]
    aggregation: Aggregation,
    #[serde(default = "default_resolution")]
    centroid_resolution: usize,
    output: RawVariable,
    inputs: Vec<RawInput>,
    controller: ControllerConfig,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariable {
    name: String,
    universe: Universe,
    terms: Vec<Term>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    variable: EnvVariable,
    universe: Universe,
    terms: Vec<Term>,
    fam: Vec<Vec<RiskLevel>>,
}

impl RawRuleBase {
    fn build(self) -> Result<RuleBase, RuleBaseError> {
        if self.version != SCHEMA_VERSION {
            return Err(RuleBaseError::Version(self.version));
        }
        if self.centroid_resolution < MIN_RESOLUTION {
            return Err(RuleBaseError::Invalid(format!(
                "centroid_resolution must be at least {MIN_RESOLUTION}"
            )));
        }
        let output =
            LinguisticVariable::new(self.output.name, self.output.universe, self.output.terms)?;
        let names: Vec<String> = output.term_names();
        if names != ["NFR", "LFR", "HFR", "EFR"] {
            return Err(RuleBaseError::Invalid(format!(
                "output terms must be NFR, LFR, HFR, EFR; got {names:?}"
            )));
        }

        let mut inputs = BTreeMap::new();
        for raw in self.inputs {
            let name = raw.variable.as_str();
            let variable = LinguisticVariable::new(name, raw.universe, raw.terms)?;
            let terms = variable.term_names();
            let fam = FamTable::new(name, terms.clone(), terms, raw.fam)?;
            if inputs
                .insert(raw.variable, InputRules { variable, fam })
                .is_some()
            {
                return Err(RuleBaseError::Invalid(format!(
                    "input `{name}` defined twice"
                )));
            }
        }
        if let Some(missing) = EnvVariable::ALL.iter().find(|v| !inputs.contains_key(v)) {
            return Err(RuleBaseError::Invalid(format!(
                "input `{missing}` is missing"
            )));
        }
        self.controller.validate()?;

        Ok(RuleBase {
            version: self.version,
            aggregation: self.aggregation,
            centroid_resolution: self.centroid_resolution,
            output,
            inputs,
            controller: self.controller,
        })
    }
}
