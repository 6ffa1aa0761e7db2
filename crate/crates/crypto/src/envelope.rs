//! Byte-exact package envelope.
//!
//! ```text
//! version(1) | device-id(15 ASCII digits) | package-id(16) | iv(16)
//! | plaintext-length(4, BE) | key-index(4, BE) | auth-path(32 x depth)
//! | leaf-pubkey(16384) | revealed(8192) | ciphertext
//! ```
//!
//! The auth-path depth is not encoded; it follows from the total length,
//! since the ciphertext length is fixed by the plaintext length.

use std::fmt;
use std::str::FromStr;

use firewatch_core::{DeviceId, Measurement};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbc::{decrypt_envelope, encrypt_envelope, padded_len};
use crate::keys::{verify_package, NodeKeyState, PackageSignature};
use crate::{CryptoError, Hash};

pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 1 + 15 + 16 + 16 + 4;
/// Largest auth path accepted by the parser (pools up to 2^20 keys).
pub const MAX_DEPTH: usize = 20;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackageId(pub [u8; 16]);

impl PackageId {
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random())
    }
}

impl fmt::Display for PackageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PackageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackageId({self})")
    }
}

impl FromStr for PackageId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out)
            .map_err(|e| CryptoError::Malformed(format!("package id: {e}")))?;
        Ok(Self(out))
    }
}

impl Serialize for PackageId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PackageId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What gets signed and encrypted: the measurement plus the package id, so
/// the id used for replay suppression is authenticated too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackagePayload {
    pub package_id: PackageId,
    pub measurement: Measurement,
}

impl PackagePayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvelopeHeader {
    pub version: u8,
    pub device_id: DeviceId,
    pub package_id: PackageId,
    pub iv: [u8; 16],
    pub plaintext_len: u32,
}

impl EnvelopeHeader {
    /// Reads the clear header without touching the signature or ciphertext.
    pub fn peek(b: &[u8]) -> Result<Self, CryptoError> {
        if b.len() < HEADER_LEN {
            return Err(CryptoError::Malformed(format!(
                "{} bytes is shorter than the header",
                b.len()
            )));
        }
        let version = b[0];
        if version != VERSION {
            return Err(CryptoError::Malformed(format!(
                "unsupported version {version}"
            )));
        }
        let device_id =
            DeviceId::from_bytes(&b[1..16]).map_err(|e| CryptoError::Malformed(e.to_string()))?;
        Ok(Self {
            version,
            device_id,
            package_id: PackageId(b[16..32].try_into().unwrap()),
            iv: b[32..48].try_into().unwrap(),
            plaintext_len: u32::from_be_bytes(b[48..52].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error("decryption failed: {0}")]
    Decrypt(CryptoError),
    #[error("signature does not verify against the registered root")]
    Signature,
    #[error("payload is not a valid measurement: {0}")]
    Payload(String),
    #[error("clear header does not match the signed payload")]
    HeaderMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub header: EnvelopeHeader,
    pub signature: PackageSignature,
    pub ciphertext: Vec<u8>,
}

impl Envelope {
    /// Signs `plaintext`, then encrypts it.
    pub fn seal_bytes(
        keys: &mut NodeKeyState,
        aes_key: &[u8; 32],
        device_id: DeviceId,
        package_id: PackageId,
        iv: [u8; 16],
        plaintext: &[u8],
    ) -> Result<Self, CryptoError> {
        let plaintext_len = u32::try_from(plaintext.len())
            .map_err(|_| CryptoError::Malformed("plaintext longer than 4 GiB".into()))?;
        let signature = keys.sign_package(plaintext)?;
        Ok(Self {
            header: EnvelopeHeader {
                version: VERSION,
                device_id,
                package_id,
                iv,
                plaintext_len,
            },
            signature,
            ciphertext: encrypt_envelope(aes_key, &iv, plaintext),
        })
    }

    pub fn seal(
        keys: &mut NodeKeyState,
        aes_key: &[u8; 32],
        iv: [u8; 16],
        payload: &PackagePayload,
    ) -> Result<Self, CryptoError> {
        let device_id = payload.measurement.device_id.clone();
        Self::seal_bytes(
            keys,
            aes_key,
            device_id,
            payload.package_id,
            iv,
            &payload.to_bytes(),
        )
    }

    pub fn device_id(&self) -> &DeviceId {
        &self.header.device_id
    }

    pub fn package_id(&self) -> PackageId {
        self.header.package_id
    }

    pub fn key_index(&self) -> u32 {
        self.signature.key_index
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(
            HEADER_LEN
                + PackageSignature::encoded_len(self.signature.auth_path.len())
                + self.ciphertext.len(),
        );
        out.push(h.version);
        out.extend_from_slice(h.device_id.as_bytes());
        out.extend_from_slice(&h.package_id.0);
        out.extend_from_slice(&h.iv);
        out.extend_from_slice(&h.plaintext_len.to_be_bytes());
        self.signature.write_to(&mut out);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        let header = EnvelopeHeader::peek(b)?;
        let ct_len = padded_len(header.plaintext_len as usize);
        let sig_len = b
            .len()
            .checked_sub(HEADER_LEN + ct_len)
            .ok_or_else(|| CryptoError::Malformed("envelope shorter than its ciphertext".into()))?;
        let fixed = PackageSignature::encoded_len(0);
        let path_bytes = sig_len
            .checked_sub(fixed)
            .ok_or_else(|| CryptoError::Malformed("signature block truncated".into()))?;
        if path_bytes % 32 != 0 || path_bytes / 32 > MAX_DEPTH {
            return Err(CryptoError::Malformed(format!(
                "auth path of {path_bytes} bytes"
            )));
        }
        let signature =
            PackageSignature::from_bytes(&b[HEADER_LEN..HEADER_LEN + sig_len], path_bytes / 32)?;
        Ok(Self {
            header,
            signature,
            ciphertext: b[HEADER_LEN + sig_len..].to_vec(),
        })
    }

    /// Decrypts and verifies, returning the signed plaintext.
    pub fn open_bytes(&self, aes_key: &[u8; 32], root: &Hash) -> Result<Vec<u8>, OpenError> {
        let plaintext = decrypt_envelope(
            aes_key,
            &self.header.iv,
            &self.ciphertext,
            self.header.plaintext_len as usize,
        )
        .map_err(OpenError::Decrypt)?;
        if !verify_package(root, &plaintext, &self.signature) {
            return Err(OpenError::Signature);
        }
        Ok(plaintext)
    }

    /// Decrypts, verifies and parses, checking the payload against the
    /// clear header.
    pub fn open(&self, aes_key: &[u8; 32], root: &Hash) -> Result<PackagePayload, OpenError> {
        let plaintext = self.open_bytes(aes_key, root)?;
        let payload = PackagePayload::from_bytes(&plaintext)
            .map_err(|e| OpenError::Payload(e.to_string()))?;
        if payload.package_id != self.header.package_id
            || payload.measurement.device_id != self.header.device_id
        {
            return Err(OpenError::HeaderMismatch);
        }
        Ok(payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceId {
        "356938035643809".parse().unwrap()
    }

    fn sealed(plaintext: &[u8]) -> (Envelope, NodeKeyState) {
        let mut ks = NodeKeyState::from_seed([4; 32], 8).unwrap();
        let env = Envelope::seal_bytes(
            &mut ks,
            &[7; 32],
            device(),
            PackageId([1; 16]),
            [2; 16],
            plaintext,
        )
        .unwrap();
        (env, ks)
    }

    #[test]
    fn layout_offsets() {
        let (env, _) = sealed(b"hello");
        let b = env.to_bytes();
        assert_eq!(b[0], VERSION);
        assert_eq!(&b[1..16], b"356938035643809");
        assert_eq!(&b[16..32], &[1; 16]);
        assert_eq!(&b[32..48], &[2; 16]);
        assert_eq!(&b[48..52], &5u32.to_be_bytes());
        assert_eq!(&b[52..56], &0u32.to_be_bytes());
        assert_eq!(b.len(), HEADER_LEN + PackageSignature::encoded_len(3) + 16);
    }

    #[test]
    fn bytes_round_trip_and_open() {
        for len in [0usize, 1, 15, 16, 17, 200] {
            let msg: Vec<u8> = (0..len as u8).collect();
            let (env, ks) = sealed(&msg);
            let parsed = Envelope::from_bytes(&env.to_bytes()).unwrap();
            assert_eq!(parsed, env);
            assert_eq!(parsed.open_bytes(&[7; 32], &ks.root()).unwrap(), msg);
        }
    }

    #[test]
    fn truncation_and_extension_rejected() {
        let (env, _) = sealed(b"hello");
        let b = env.to_bytes();
        assert!(Envelope::from_bytes(&b[..b.len() - 1]).is_err());
        let mut longer = b.clone();
        longer.push(0);
        assert!(Envelope::from_bytes(&longer).is_err());
        assert!(Envelope::from_bytes(&b[..10]).is_err());
        let mut bad_version = b;
        bad_version[0] = 2;
        assert!(Envelope::from_bytes(&bad_version).is_err());
    }

    #[test]
    fn wrong_key_fails_signature() {
        let (env, ks) = sealed(b"hello world");
        assert!(matches!(
            env.open_bytes(&[8; 32], &ks.root()),
            Err(OpenError::Signature)
        ));
    }

    #[test]
    fn package_id_text_round_trip() {
        let id = PackageId([0xab; 16]);
        assert_eq!(id.to_string().parse::<PackageId>().unwrap(), id);
        assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{id}\""));
        assert!("zz".parse::<PackageId>().is_err());
    }
}
