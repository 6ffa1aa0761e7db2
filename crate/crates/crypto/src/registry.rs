//! Key predistribution and the device registry file.
//!
//! The registry is a JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "devices": [
//!     {
//!       "device_id": "356938035643809",
//!       "aes_key": "<64 hex>",
//!       "merkle_root": "<64 hex>",
//!       "pool_size": 1024,
//!       "key_seed": "<64 hex, omitted in service copies>"
//!     }
//!   ]
//! }
//! ```
//!
//! It holds symmetric keys and is written with mode 0600 on Unix.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use firewatch_core::DeviceId;
use rand::CryptoRng;
use serde::{Deserialize, Serialize};

use crate::keys::{check_pool_size, NodeKeyState};
use crate::{CryptoError, Hash};

pub const REGISTRY_VERSION: u32 = 1;

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<[u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[u8; 32]>, D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] [u8; 32]);
            Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceKeys {
    pub device_id: DeviceId,
    #[serde(with = "hex32")]
    pub aes_key: [u8; 32],
    #[serde(with = "hex32")]
    pub merkle_root: Hash,
    pub pool_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "hex32::opt")]
    pub key_seed: Option<[u8; 32]>,
}

impl std::fmt::Debug for DeviceKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceKeys")
            .field("device_id", &self.device_id)
            .field("merkle_root", &hex::encode(self.merkle_root))
            .field("pool_size", &self.pool_size)
            .finish_non_exhaustive()
    }
}

impl DeviceKeys {
    /// Rebuilds the node's key pool from its seed and checks it against the
    /// registered root.
    pub fn node_keys(&self) -> Result<NodeKeyState, CryptoError> {
        let seed = self
            .key_seed
            .ok_or_else(|| CryptoError::Format(format!("no key seed for {}", self.device_id)))?;
        let ks = NodeKeyState::from_seed(seed, self.pool_size)?;
        if ks.root() != self.merkle_root {
            return Err(CryptoError::Format(format!(
                "key seed for {} does not match its root",
                self.device_id
            )));
        }
        Ok(ks)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    devices: BTreeMap<DeviceId, DeviceKeys>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    version: u32,
    devices: Vec<DeviceKeys>,
}

impl Registry {
    pub fn insert(&mut self, keys: DeviceKeys) -> Result<(), CryptoError> {
        if self.devices.contains_key(&keys.device_id) {
            return Err(CryptoError::DuplicateDevice(keys.device_id.to_string()));
        }
        self.devices.insert(keys.device_id.clone(), keys);
        Ok(())
    }

    pub fn get(&self, device: &DeviceId) -> Option<&DeviceKeys> {
        self.devices.get(device)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceKeys> {
        self.devices.values()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Copy without key seeds, enough for verification only.
    pub fn service_view(&self) -> Registry {
        let devices = self
            .devices
            .iter()
            .map(|(id, k)| {
                (
                    id.clone(),
                    DeviceKeys {
                        key_seed: None,
                        ..k.clone()
                    },
                )
            })
            .collect();
        Registry { devices }
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            version: REGISTRY_VERSION,
            devices: self.devices.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CryptoError> {
        let file: RegistryFile =
            serde_json::from_str(s).map_err(|e| CryptoError::Format(e.to_string()))?;
        if file.version != REGISTRY_VERSION {
            return Err(CryptoError::Format(format!(
                "unsupported registry version {}",
                file.version
            )));
        }
        let mut reg = Registry::default();
        for d in file.devices {
            check_pool_size(d.pool_size)?;
            reg.insert(d)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, CryptoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes atomically (temp file + rename), owner read/write only.
    pub fn save(&self, path: &Path) -> Result<(), CryptoError> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("registry")
        ));
        let mut opts = std::fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts.open(&tmp)?;
        f.write_all(self.to_json().as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

pub struct Predistribution {
    pub registry: Registry,
    pub nodes: BTreeMap<DeviceId, NodeKeyState>,
}

/// Draws an AES key and key seed per device and builds each key pool.
/// Secrets are drawn in device order, so a seeded `rng` gives a
/// reproducible registry; pools are built on all available cores.
pub fn predistribute_keys<R: CryptoRng + ?Sized>(
    devices: &[DeviceId],
    pool_size: usize,
    rng: &mut R,
) -> Result<Predistribution, CryptoError> {
    check_pool_size(pool_size)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut secrets = Vec::with_capacity(devices.len());
    for d in devices {
        if !seen.insert(d) {
            return Err(CryptoError::DuplicateDevice(d.to_string()));
        }
        let mut aes_key = [0u8; 32];
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut aes_key);
        rng.fill_bytes(&mut seed);
        secrets.push((d.clone(), aes_key, seed));
    }

    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(secrets.len().max(1));
    let chunk = secrets.len().div_ceil(workers).max(1);
    let built: Vec<Result<NodeKeyState, CryptoError>> = std::thread::scope(|s| {
        let handles: Vec<_> = secrets
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|(_, _, seed)| NodeKeyState::from_seed(*seed, pool_size))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("key pool worker panicked"))
            .collect()
    });

    let mut registry = Registry::default();
    let mut nodes = BTreeMap::new();
    for ((device_id, aes_key, seed), ks) in secrets.into_iter().zip(built) {
        let ks = ks?;
        registry.insert(DeviceKeys {
            device_id: device_id.clone(),
            aes_key,
            merkle_root: ks.root(),
            pool_size,
            key_seed: Some(seed),
        })?;
        nodes.insert(device_id, ks);
    }
    Ok(Predistribution { registry, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ids(n: usize) -> Vec<DeviceId> {
        (0..n)
            .map(|i| format!("35693803564{i:04}").parse().unwrap())
            .collect()
    }

    #[test]
    fn seeded_predistribution_is_reproducible() {
        let a = predistribute_keys(&ids(3), 4, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let b = predistribute_keys(&ids(3), 4, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.registry, b.registry);
        for d in a.registry.devices() {
            assert_eq!(a.nodes[&d.device_id].root(), d.merkle_root);
            assert_eq!(d.node_keys().unwrap().root(), d.merkle_root);
        }
    }

    #[test]
    fn duplicate_device_rejected() {
        let mut devices = ids(2);
        devices.push(devices[0].clone());
        assert!(matches!(
            predistribute_keys(&devices, 4, &mut ChaCha20Rng::seed_from_u64(1)),
            Err(CryptoError::DuplicateDevice(_))
        ));
    }

    #[test]
    fn json_round_trip_and_service_view() {
        let p = predistribute_keys(&ids(2), 2, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let back = Registry::from_json(&p.registry.to_json()).unwrap();
        assert_eq!(back, p.registry);
        let view = p.registry.service_view();
        assert!(!view.to_json().contains("key_seed"));
        assert!(view.devices().next().unwrap().node_keys().is_err());
        assert_eq!(Registry::from_json(&view.to_json()).unwrap(), view);
    }

    #[test]
    fn tampered_seed_detected() {
        let p = predistribute_keys(&ids(1), 2, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let mut d = p.registry.devices().next().unwrap().clone();
        d.key_seed = Some([0; 32]);
        assert!(d.node_keys().is_err());
    }

    #[cfg(unix)]
    #[test]
    fn saved_file_is_owner_only() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        let p = predistribute_keys(&ids(1), 2, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        p.registry.save(&path).unwrap();
        let mode = std::fs::metadata(&path).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
        assert_eq!(Registry::load(&path).unwrap(), p.registry);
    }
}
