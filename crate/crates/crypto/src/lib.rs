//! Integrity and confidentiality for sensor packages.
//!
//! Packages are signed with Lamport one-time keys over SHA-256. Each node
//! holds a pool of one-time keys certified by a Merkle root, which is all
//! the service needs to verify any package from that node. Payloads are
//! encrypted with AES-256-CBC using zero padding plus an explicit length.

pub mod cbc;
pub mod envelope;
pub mod keys;
pub mod lamport;
pub mod merkle;
pub mod registry;

pub use envelope::{Envelope, EnvelopeHeader, PackageId};
pub use keys::{verify_package, NodeKeyState, PackageSignature, DEFAULT_POOL_SIZE};
pub use registry::{predistribute_keys, DeviceKeys, Predistribution, Registry};

use thiserror::Error;

pub type Hash = [u8; 32];

pub fn sha256(data: &[u8]) -> Hash {
    use sha2::{Digest, Sha256};
    Sha256::digest(data).into()
}

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("one-time key already used")]
    KeyReuse,
    #[error(
        "key pool of {pool} one-time keys exhausted; re-run key predistribution for this device"
    )]
    PoolExhausted { pool: usize },
    #[error("merkle tree needs at least one leaf")]
    EmptyTree,
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: usize, leaves: usize },
    #[error("ciphertext length {0} is not a multiple of 16")]
    CiphertextLength(usize),
    #[error("plaintext length {len} exceeds ciphertext capacity {capacity}")]
    PlaintextLength { len: usize, capacity: usize },
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("pool size must be a power of two between 1 and 2^20, got {0}")]
    PoolSize(usize),
    #[error("duplicate device id {0}")]
    DuplicateDevice(String),
    #[error("registry I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry format: {0}")]
    Format(String),
}
