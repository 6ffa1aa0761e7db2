use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Severity of detected forest-fire risk. Ordered from nonexistent to extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    /// Nonexistent forest-fire risk.
    #[serde(rename = "NFR")]
    Nfr,
    /// Low risk.
    #[serde(rename = "LFR")]
    Lfr,
    /// High risk.
    #[serde(rename = "HFR")]
    Hfr,
    /// Extreme risk.
    #[serde(rename = "EFR")]
    Efr,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 4] = [
        RiskLevel::Nfr,
        RiskLevel::Lfr,
        RiskLevel::Hfr,
        RiskLevel::Efr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Nfr => "NFR",
            RiskLevel::Lfr => "LFR",
            RiskLevel::Hfr => "HFR",
            RiskLevel::Efr => "EFR",
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown risk level `{0}` (expected NFR, LFR, HFR or EFR)")]
pub struct ParseLevelError(pub String);

impl FromStr for RiskLevel {
    type Err = ParseLevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NFR" => Ok(RiskLevel::Nfr),
            "LFR" => Ok(RiskLevel::Lfr),
            "HFR" => Ok(RiskLevel::Hfr),
            "EFR" => Ok(RiskLevel::Efr),
            _ => Err(ParseLevelError(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_total_and_fixed() {
        assert!(RiskLevel::Nfr < RiskLevel::Lfr);
        assert!(RiskLevel::Lfr < RiskLevel::Hfr);
        assert!(RiskLevel::Hfr < RiskLevel::Efr);
        for (i, l) in RiskLevel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(RiskLevel::from_index(i), Some(*l));
        }
    }

    #[test]
    fn parses_and_serializes_short_codes() {
        assert_eq!("efr".parse::<RiskLevel>().unwrap(), RiskLevel::Efr);
        assert!("XFR".parse::<RiskLevel>().is_err());
        assert_eq!(serde_json::to_string(&RiskLevel::Hfr).unwrap(), "\"HFR\"");
    }
}
