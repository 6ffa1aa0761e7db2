#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use firewatch_core::{DeviceId, Location, Measurement, Readings};
use firewatch_crypto::envelope::PackagePayload;
use firewatch_crypto::{predistribute_keys, Envelope, NodeKeyState, PackageId, Registry};
use firewatch_service::auth::{hash_password, UserConfig};
use firewatch_service::Role;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const DEVICES: [&str; 3] = ["356938035643809", "490154203237518", "353918051234567"];
pub const PASSWORD: &str = "correct horse";

pub fn t0() -> DateTime<Utc> {
    "2026-07-15T06:00:00Z".parse().unwrap()
}

pub fn at(secs: i64) -> DateTime<Utc> {
    t0() + chrono::Duration::seconds(secs)
}

pub fn baseline() -> Readings {
    Readings {
        temperature: 25.0,
        humidity: 50.0,
        wind_speed: 10.0,
        rainfall: 40.0,
        co2: 300.0,
        co: 0.5,
        o2: 21.0,
    }
}

pub fn fire() -> Readings {
    Readings {
        temperature: 45.0,
        co2: 2000.0,
        co: 10.0,
        o2: 18.0,
        ..baseline()
    }
}

/// Baseline moved `f` of the way towards [`fire`].
pub fn ramp(f: f64) -> Readings {
    let target = fire();
    baseline().map(|v, b| b + (target.get(v) - b) * f)
}

pub fn users() -> Vec<UserConfig> {
    [
        ("viewer", Role::Viewer),
        ("ops", Role::Operator),
        ("admin", Role::Admin),
    ]
    .into_iter()
    .map(|(name, role)| UserConfig {
        username: name.into(),
        role,
        password_hash: hash_password(PASSWORD, name.as_bytes(), 1000),
    })
    .collect()
}

/// Sensor-side key material for a few devices.
pub struct Nodes {
    pub registry: Registry,
    keys: BTreeMap<DeviceId, NodeKeyState>,
    rng: ChaCha20Rng,
}

impl Nodes {
    pub fn new(pool: usize) -> Self {
        let devices: Vec<DeviceId> = DEVICES.iter().map(|d| d.parse().unwrap()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let p = predistribute_keys(&devices, pool, &mut rng).unwrap();
        Self {
            registry: p.registry,
            keys: p.nodes,
            rng,
        }
    }

    pub fn service_registry(&self) -> Registry {
        self.registry.service_view()
    }

    pub fn device(i: usize) -> DeviceId {
        DEVICES[i].parse().unwrap()
    }

    pub fn measurement(i: usize, area: &str, secs: i64, readings: Readings) -> Measurement {
        Measurement {
            device_id: Self::device(i),
            area_id: area.into(),
            timestamp: at(secs),
            location: Location {
                lat: 40.41,
                lon: -3.70,
            },
            battery: 80.0,
            readings,
        }
    }

    pub fn seal(&mut self, m: Measurement) -> (PackageId, Vec<u8>) {
        let package_id = PackageId::random(&mut self.rng);
        let iv: [u8; 16] = self.rng.random();
        let aes_key = self.registry.get(&m.device_id).unwrap().aes_key;
        let keys = self.keys.get_mut(&m.device_id).unwrap();
        let env = Envelope::seal(
            keys,
            &aes_key,
            iv,
            &PackagePayload {
                package_id,
                measurement: m,
            },
        )
        .unwrap();
        (package_id, env.to_bytes())
    }

    pub fn package(&mut self, i: usize, area: &str, secs: i64, readings: Readings) -> Vec<u8> {
        self.seal(Self::measurement(i, area, secs, readings)).1
    }
}
