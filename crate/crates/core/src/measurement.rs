use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// International Mobile Station Equipment Identity: exactly 15 ASCII digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DeviceId(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{0}` is not a 15-digit IMEI")]
pub struct InvalidDeviceId(pub String);

impl DeviceId {
    pub const LEN: usize = 15;

    pub fn new(s: impl Into<String>) -> Result<Self, InvalidDeviceId> {
        let s = s.into();
        if s.len() == Self::LEN && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Self(s))
        } else {
            Err(InvalidDeviceId(s))
        }
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, InvalidDeviceId> {
        Self::new(String::from_utf8_lossy(b).into_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DeviceId {
    type Err = InvalidDeviceId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for DeviceId {
    type Error = InvalidDeviceId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<DeviceId> for String {
    fn from(d: DeviceId) -> String {
        d.0
    }
}

/// The seven monitored environmental variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvVariable {
    Temperature,
    Humidity,
    WindSpeed,
    Rainfall,
    Co2,
    Co,
    O2,
}

impl EnvVariable {
    pub const ALL: [EnvVariable; 7] = [
        EnvVariable::Temperature,
        EnvVariable::Humidity,
        EnvVariable::WindSpeed,
        EnvVariable::Rainfall,
        EnvVariable::Co2,
        EnvVariable::Co,
        EnvVariable::O2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvVariable::Temperature => "temperature",
            EnvVariable::Humidity => "humidity",
            EnvVariable::WindSpeed => "wind_speed",
            EnvVariable::Rainfall => "rainfall",
            EnvVariable::Co2 => "co2",
            EnvVariable::Co => "co",
            EnvVariable::O2 => "o2",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            EnvVariable::Temperature => "°C",
            EnvVariable::Humidity | EnvVariable::O2 => "%",
            EnvVariable::WindSpeed => "km/h",
            EnvVariable::Rainfall => "mm",
            EnvVariable::Co2 | EnvVariable::Co => "ppm",
        }
    }
}

impl fmt::Display for EnvVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvVariable {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown environmental variable `{s}`"))
    }
}

/// One value per environmental variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readings {
    /// °C
    pub temperature: f64,
    /// relative humidity, %
    pub humidity: f64,
    /// km/h
    pub wind_speed: f64,
    /// mm
    pub rainfall: f64,
    /// ppm
    pub co2: f64,
    /// ppm
    pub co: f64,
    /// %
    pub o2: f64,
}

impl Readings {
    pub fn get(&self, v: EnvVariable) -> f64 {
        match v {
            EnvVariable::Temperature => self.temperature,
            EnvVariable::Humidity => self.humidity,
            EnvVariable::WindSpeed => self.wind_speed,
            EnvVariable::Rainfall => self.rainfall,
            EnvVariable::Co2 => self.co2,
            EnvVariable::Co => self.co,
            EnvVariable::O2 => self.o2,
        }
    }

    pub fn get_mut(&mut self, v: EnvVariable) -> &mut f64 {
        match v {
            EnvVariable::Temperature => &mut self.temperature,
            EnvVariable::Humidity => &mut self.humidity,
            EnvVariable::WindSpeed => &mut self.wind_speed,
            EnvVariable::Rainfall => &mut self.rainfall,
            EnvVariable::Co2 => &mut self.co2,
            EnvVariable::Co => &mut self.co,
            EnvVariable::O2 => &mut self.o2,
        }
    }

    pub fn from_fn(mut f: impl FnMut(EnvVariable) -> f64) -> Self {
        let mut r = Readings {
            temperature: 0.0,
            humidity: 0.0,
            wind_speed: 0.0,
            rainfall: 0.0,
            co2: 0.0,
            co: 0.0,
            o2: 0.0,
        };
        for v in EnvVariable::ALL {
            *r.get_mut(v) = f(v);
        }
        r
    }

    pub fn map(&self, mut f: impl FnMut(EnvVariable, f64) -> f64) -> Self {
        Self::from_fn(|v| f(v, self.get(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

/// One timestamped sample from a sensor node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub device_id: DeviceId,
    pub area_id: String,
    /// UTC, whole seconds.
    pub timestamp: DateTime<Utc>,
    pub location: Location,
    /// %
    pub battery: f64,
    pub readings: Readings,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("`{variable}` is not finite ({value})")]
    NonFinite { variable: String, value: f64 },
    #[error("battery level {0} outside [0, 100]")]
    Battery(f64),
    #[error("location ({lat}, {lon}) is not a valid coordinate")]
    Location { lat: f64, lon: f64 },
    #[error("area id must be non-empty")]
    EmptyArea,
    #[error("timestamp has sub-second precision")]
    SubSecond,
}

impl Measurement {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        for v in EnvVariable::ALL {
            let value = self.readings.get(v);
            if !value.is_finite() {
                return Err(MeasurementError::NonFinite {
                    variable: v.to_string(),
                    value,
                });
            }
        }
        if !(0.0..=100.0).contains(&self.battery) {
            return Err(MeasurementError::Battery(self.battery));
        }
        let Location { lat, lon } = self.location;
        if !((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)) {
            return Err(MeasurementError::Location { lat, lon });
        }
        if self.area_id.is_empty() {
            return Err(MeasurementError::EmptyArea);
        }
        if self.timestamp.timestamp_subsec_nanos() != 0 {
            return Err(MeasurementError::SubSecond);
        }
        Ok(())
    }
}
