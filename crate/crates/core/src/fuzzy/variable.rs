use serde::{Deserialize, Serialize};

use super::membership::MembershipFunction;
use super::FuzzyError;

/// Closed interval of admissible values plus their unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub min: f64,
    pub max: f64,
    pub unit: String,
}

impl Universe {
    pub fn new(min: f64, max: f64, unit: impl Into<String>) -> Self {
        Self {
            min,
            max,
            unit: unit.into(),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    #[serde(flatten)]
    pub set: MembershipFunction,
}

impl Term {
    pub fn new(name: impl Into<String>, set: MembershipFunction) -> Self {
        Self {
            name: name.into(),
            set,
        }
    }
}

/// A named quantity with fuzzy terms ordered from least to most severe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinguisticVariable {
    pub name: String,
    pub universe: Universe,
    pub terms: Vec<Term>,
}

impl LinguisticVariable {
    /// Builds the variable and checks coverage and overlap of its terms.
    pub fn new(
        name: impl Into<String>,
        universe: Universe,
        terms: Vec<Term>,
    ) -> Result<Self, FuzzyError> {
        let var = Self {
            name: name.into(),
            universe,
            terms,
        };
        var.validate()?;
        Ok(var)
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == term)
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    /// Clamps `x` into the universe; the flag reports whether it moved.
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        let c = x.clamp(self.universe.min, self.universe.max);
        (c, c != x)
    }

    /// Same variable with universe and every breakpoint mapped through
    /// `x -> scale * x + offset`.
    pub fn remapped(&self, scale: f64, offset: f64) -> Self {
        Self {
            name: self.name.clone(),
            universe: Universe {
                min: scale * self.universe.min + offset,
                max: scale * self.universe.max + offset,
                unit: self.universe.unit.clone(),
            },
            terms: self
                .terms
                .iter()
                .map(|t| Term::new(t.name.clone(), t.set.remapped(scale, offset)))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        let err = |m: String| Err(FuzzyError::Config(format!("variable `{}`: {m}", self.name)));
        let u = &self.universe;
        if !(u.min.is_finite() && u.max.is_finite() && u.min < u.max) {
            return err(format!(
                "empty or non-finite universe [{}, {}]",
                u.min, u.max
            ));
        }
        if self.terms.is_empty() {
            return err("no terms".into());
        }
        for (i, t) in self.terms.iter().enumerate() {
            if self.terms[..i].iter().any(|o| o.name == t.name) {
                return err(format!("duplicate term `{}`", t.name));
            }
        }

        // Degrees are linear between consecutive breakpoints, so positivity
        // at every breakpoint (plus a dense grid for the overlap check)
        // settles both properties.
        let mut probes: Vec<f64> = self
            .terms
            .iter()
            .flat_map(|t| t.set.corners())
            .filter(|x| u.contains(*x))
            .chain([u.min, u.max])
            .collect();
        const GRID: usize = 4000;
        probes.extend((0..=GRID).map(|i| u.min + (u.max - u.min) * i as f64 / GRID as f64));
        probes.sort_by(f64::total_cmp);
        probes.dedup();
        let mids: Vec<f64> = probes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        probes.extend(mids);

        for &x in &probes {
            if self.terms.iter().all(|t| t.set.degree(x) <= 0.0) {
                return err(format!("no term covers x = {x}"));
            }
        }
        for pair in self.terms.windows(2) {
            let overlap = probes
                .iter()
                .any(|&x| pair[0].set.degree(x) > 0.0 && pair[1].set.degree(x) > 0.0);
            if !overlap {
                return err(format!(
                    "adjacent terms `{}` and `{}` do not overlap",
                    pair[0].name, pair[1].name
                ));
            }
        }
        Ok(())
    }
}

/// Degrees of one crisp value in every term of a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzifiedValue {
    pub variable: String,
    pub terms: Vec<String>,
    pub degrees: Vec<f64>,
}

impl FuzzifiedValue {
    /// Explicit degrees for some terms; the rest are zero.
    pub fn from_pairs(var: &LinguisticVariable, pairs: &[(&str, f64)]) -> Result<Self, FuzzyError> {
        let mut degrees = vec![0.0; var.terms.len()];
        for (name, d) in pairs {
            let i = var
                .term_index(name)
                .ok_or_else(|| FuzzyError::UnknownTerm {
                    variable: var.name.clone(),
                    term: name.to_string(),
                })?;
            degrees[i] = d.clamp(0.0, 1.0);
        }
        Ok(Self {
            variable: var.name.clone(),
            terms: var.term_names(),
            degrees,
        })
    }

    pub fn degree(&self, term: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t == term)
            .map(|i| self.degrees[i])
    }
}

/// Fuzzifies `x` after clamping it into the variable's universe.
pub fn fuzzify(var: &LinguisticVariable, x: f64) -> Result<FuzzifiedValue, FuzzyError> {
    if !x.is_finite() {
        return Err(FuzzyError::InvalidMeasurement {
            variable: var.name.clone(),
            value: x,
        });
    }
    let (x, _) = var.clamp(x);
    Ok(FuzzifiedValue {
        variable: var.name.clone(),
        terms: var.term_names(),
        degrees: var.terms.iter().map(|t| t.set.degree(x)).collect(),
    })
}
