use serde::{Deserialize, Serialize};

use super::FuzzyError;
use crate::level::RiskLevel;

/// Fuzzy associative memory: (last-measurement term, average term) -> risk level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamTable {
    pub variable: String,
    /// Terms of the last registered measurement.
    pub rows: Vec<String>,
    /// Terms of the windowed average.
    pub columns: Vec<String>,
    pub cells: Vec<Vec<RiskLevel>>,
}

impl FamTable {
    pub fn new(
        variable: impl Into<String>,
        rows: Vec<String>,
        columns: Vec<String>,
        cells: Vec<Vec<RiskLevel>>,
    ) -> Result<Self, FuzzyError> {
        let table = Self {
            variable: variable.into(),
            rows,
            columns,
            cells,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        let err = |m: String| Err(FuzzyError::Config(format!("FAM `{}`: {m}", self.variable)));
        if self.rows.is_empty() || self.columns.is_empty() {
            return err("empty table".into());
        }
        if self.cells.len() != self.rows.len()
            || self.cells.iter().any(|r| r.len() != self.columns.len())
        {
            return err(format!(
                "expected {}x{} cells",
                self.rows.len(),
                self.columns.len()
            ));
        }
        for (i, row) in self.cells.iter().enumerate() {
            if row.windows(2).any(|w| w[0] > w[1]) {
                return err(format!("row `{}` decreases in severity", self.rows[i]));
            }
        }
        for j in 0..self.columns.len() {
            if self.cells.windows(2).any(|w| w[0][j] > w[1][j]) {
                return err(format!(
                    "column `{}` decreases in severity",
                    self.columns[j]
                ));
            }
        }
        Ok(())
    }

    /// Cell for `(row, col)`, i.e. last-measurement term and average term.
    pub fn lookup(&self, row: &str, col: &str) -> Result<RiskLevel, FuzzyError> {
        let unknown = |term: &str| FuzzyError::UnknownTerm {
            variable: self.variable.clone(),
            term: term.to_string(),
        };
        let i = self
            .rows
            .iter()
            .position(|r| r == row)
            .ok_or_else(|| unknown(row))?;
        let j = self
            .columns
            .iter()
            .position(|c| c == col)
            .ok_or_else(|| unknown(col))?;
        Ok(self.cells[i][j])
    }
}
