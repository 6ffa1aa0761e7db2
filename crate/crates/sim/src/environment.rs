use std::collections::BTreeMap;
use std::path::Path;

use firewatch_core::{EnvVariable, Readings};
use rand::Rng;
use serde::Deserialize;

use crate::scenario::{EnvironmentSpec, FireSpec, ScenarioError};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    rows: Vec<(u64, Readings)>,
}

#[derive(Deserialize)]
struct SeriesRow {
    offset_seconds: u64,
    temperature: f64,
    humidity: f64,
    wind_speed: f64,
    rainfall: f64,
    co2: f64,
    co: f64,
    o2: f64,
}

impl Series {
    pub fn from_reader(r: impl std::io::Read) -> Result<Self, String> {
        let mut rows = Vec::new();
        for (i, row) in csv::Reader::from_reader(r)
            .deserialize::<SeriesRow>()
            .enumerate()
        {
            let row = row.map_err(|e| format!("row {}: {e}", i + 1))?;
            let readings = Readings {
                temperature: row.temperature,
                humidity: row.humidity,
                wind_speed: row.wind_speed,
                rainfall: row.rainfall,
                co2: row.co2,
                co: row.co,
                o2: row.o2,
            };
            if EnvVariable::ALL
                .iter()
                .any(|&v| !readings.get(v).is_finite())
            {
                return Err(format!("row {}: non-finite value", i + 1));
            }
            if rows.last().is_some_and(|&(t, _)| t >= row.offset_seconds) {
                return Err(format!("row {}: offsets must increase", i + 1));
            }
            rows.push((row.offset_seconds, readings));
        }
        if rows.is_empty() {
            return Err("no rows".into());
        }
        Ok(Self { rows })
    }

    /// Value of the last row at or before `t`; `None` before the first row.
    pub fn at(&self, t_seconds: f64) -> Option<Readings> {
        let idx = self.rows.partition_point(|&(o, _)| (o as f64) <= t_seconds);
        idx.checked_sub(1).map(|i| self.rows[i].1)
    }
}

/// Noise-free environment per area plus multiplicative measurement noise.
#[derive(Debug, Clone)]
pub struct EnvironmentModel {
    baseline: Readings,
    areas: BTreeMap<String, Readings>,
    series: BTreeMap<String, Series>,
    fires: Vec<FireSpec>,
    noise: f64,
}

impl EnvironmentModel {
    pub fn from_spec(spec: &EnvironmentSpec, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut series = BTreeMap::new();
        for s in &spec.series {
            let path = base_dir.join(&s.path);
            let file = std::fs::File::open(&path).map_err(|source| ScenarioError::Io {
                path: path.clone(),
                source,
            })?;
            let parsed = Series::from_reader(file)
                .map_err(|message| ScenarioError::Series { path, message })?;
            series.insert(s.area.clone(), parsed);
        }
        Ok(Self {
            baseline: spec.baseline,
            areas: spec
                .areas
                .iter()
                .map(|(a, p)| (a.clone(), p.overlay(&spec.baseline)))
                .collect(),
            series,
            fires: spec.fires.clone(),
            noise: spec.noise,
        })
    }

    pub fn expected(&self, area: &str, t_seconds: f64) -> Readings {
        let base = self.areas.get(area).copied().unwrap_or(self.baseline);
        let mut r = self
            .series
            .get(area)
            .and_then(|s| s.at(t_seconds))
            .unwrap_or(base);
        for f in self.fires.iter().filter(|f| f.area == area) {
            let elapsed = t_seconds - f.start_seconds as f64;
            if elapsed <= 0.0 {
                continue;
            }
            let frac = (elapsed / f.ramp_seconds as f64).min(1.0);
            let peak = f.peak.overlay(&r);
            r = r.map(|v, x| x + (peak.get(v) - x) * frac);
        }
        r
    }

    /// Expected readings with each value scaled by an independent
    /// `1 + U(-noise, noise)` factor, clamped to physical ranges.
    pub fn sample<R: Rng + ?Sized>(&self, area: &str, t_seconds: f64, rng: &mut R) -> Readings {
        let r = self.expected(area, t_seconds);
        if self.noise == 0.0 {
            return r;
        }
        r.map(|v, x| {
            let y = x * (1.0 + rng.random_range(-self.noise..=self.noise));
            match v {
                EnvVariable::Temperature => y,
                EnvVariable::Humidity => y.clamp(0.0, 100.0),
                _ => y.max(0.0),
            }
        })
    }
}
