//! Users, password hashes and bearer tokens.
//!
//! Passwords are stored as `pbkdf2-sha256$<iterations>$<salt>$<hash>` with
//! unpadded standard base64 salt and hash. Tokens are 32 random bytes handed out
//! as hex; only their SHA-256 digest is kept.

use std::collections::{BTreeMap, HashMap};

use base64::engine::general_purpose::STANDARD_NO_PAD as B64;
use base64::Engine;
use chrono::{DateTime, Utc};
use firewatch_crypto::{sha256, Hash};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PBKDF2_ITERATIONS: u32 = 100_000;
const HASH_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Viewer,
    Operator,
    Admin,
}

impl Role {
    pub fn allows(self, required: Role) -> bool {
        self >= required
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub username: String,
    pub role: Role,
    pub password_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Principal {
    pub username: String,
    pub role: Role,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("missing bearer token")]
    Missing,
    #[error("unknown token")]
    Invalid,
    #[error("token expired")]
    Expired,
    #[error("requires {0:?} role")]
    Forbidden(Role),
    #[error("invalid username or password")]
    BadCredentials,
}

pub fn hash_password(password: &str, salt: &[u8], iterations: u32) -> String {
    let mut out = [0u8; HASH_LEN];
    pbkdf2::pbkdf2_hmac::<sha2::Sha256>(password.as_bytes(), salt, iterations, &mut out);
    format!(
        "pbkdf2-sha256${iterations}${}${}",
        B64.encode(salt),
        B64.encode(out)
    )
}

/// Hashes with a fresh random salt and the default iteration count.
pub fn new_password_hash(password: &str) -> String {
    let salt: [u8; 16] = rand::random();
    hash_password(password, &salt, PBKDF2_ITERATIONS)
}

pub(crate) fn parse_password_hash(encoded: &str) -> Result<(u32, Vec<u8>, Vec<u8>), String> {
    let parts: Vec<&str> = encoded.split('$').collect();
    let [scheme, iterations, salt, hash] = parts[..] else {
        return Err("expected pbkdf2-sha256$<iterations>$<salt>$<hash>".into());
    };
    if scheme != "pbkdf2-sha256" {
        return Err(format!("unsupported scheme {scheme}"));
    }
    let iterations: u32 = iterations
        .parse()
        .map_err(|_| "bad iteration count".to_string())?;
    if iterations == 0 {
        return Err("iteration count must be positive".into());
    }
    let salt = B64.decode(salt).map_err(|_| "bad salt encoding")?;
    let hash = B64.decode(hash).map_err(|_| "bad hash encoding")?;
    Ok((iterations, salt, hash))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn verify_password(password: &str, encoded: &str) -> bool {
    let Ok((iterations, salt, expected)) = parse_password_hash(encoded) else {
        return false;
    };
    let mut out = vec![0u8; expected.len()];
    pbkdf2::pbkdf2_hmac::<sha2::Sha256>(password.as_bytes(), &salt, iterations, &mut out);
    constant_time_eq(&out, &expected)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    #[serde(with = "hex_digest")]
    pub digest: Hash,
    pub username: String,
    pub role: Role,
    pub expires_at: DateTime<Utc>,
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(String::deserialize(d)?, &mut out)
            .map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

/// Returns `(plaintext token, digest)`.
pub fn new_token() -> (String, Hash) {
    let raw: [u8; 32] = rand::random();
    (hex::encode(raw), sha256(&raw))
}

pub fn token_digest(token: &str) -> Option<Hash> {
    let mut raw = [0u8; 32];
    hex::decode_to_slice(token, &mut raw).ok()?;
    Some(sha256(&raw))
}

#[derive(Debug, Default)]
pub struct AuthStore {
    users: BTreeMap<String, UserConfig>,
    tokens: HashMap<Hash, TokenRecord>,
}

impl AuthStore {
    pub fn new(users: Vec<UserConfig>) -> Self {
        Self {
            users: users.into_iter().map(|u| (u.username.clone(), u)).collect(),
            tokens: HashMap::new(),
        }
    }

    pub fn check_password(&self, username: &str, password: &str) -> Result<Role, AuthError> {
        match self.users.get(username) {
            Some(u) if verify_password(password, &u.password_hash) => Ok(u.role),
            _ => Err(AuthError::BadCredentials),
        }
    }

    pub fn insert_token(&mut self, record: TokenRecord) {
        self.tokens.insert(record.digest, record);
    }

    pub fn authenticate(
        &self,
        token: Option<&str>,
        now: DateTime<Utc>,
        required: Role,
    ) -> Result<Principal, AuthError> {
        let token = token.ok_or(AuthError::Missing)?;
        let digest = token_digest(token).ok_or(AuthError::Invalid)?;
        let record = self.tokens.get(&digest).ok_or(AuthError::Invalid)?;
        if now >= record.expires_at {
            return Err(AuthError::Expired);
        }
        if !record.role.allows(required) {
            return Err(AuthError::Forbidden(required));
        }
        Ok(Principal {
            username: record.username.clone(),
            role: record.role,
            expires_at: record.expires_at,
        })
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}
