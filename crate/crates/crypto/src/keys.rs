//! Per-node one-time key pools.
//!
//! A pool of `2^d` Lamport key pairs is derived from a 32-byte seed: leaf `j`
//! uses ChaCha20 keyed with `SHA-256(seed || j as u32 BE)`. Only the seed and
//! the Merkle tree are kept in memory; leaf key pairs are re-derived when
//! they are needed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::lamport::{
    lamport_keygen, lamport_sign, lamport_verify, LamportKeyPair, LamportPublicKey,
};
use crate::merkle::{merkle_verify, MerkleTree};
use crate::{lamport, sha256, CryptoError, Hash};

pub const DEFAULT_POOL_SIZE: usize = 1024;
pub const MAX_POOL_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageSignature {
    pub key_index: u32,
    pub auth_path: Vec<Hash>,
    pub leaf_pubkey: LamportPublicKey,
    pub revealed: Vec<Hash>,
}

impl PackageSignature {
    pub fn encoded_len(depth: usize) -> usize {
        4 + 32 * depth + lamport::PUBLIC_KEY_LEN + lamport::SIGNATURE_LEN
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key_index.to_be_bytes());
        for h in &self.auth_path {
            out.extend_from_slice(h);
        }
        out.extend_from_slice(&self.leaf_pubkey.to_bytes());
        for r in &self.revealed {
            out.extend_from_slice(r);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.auth_path.len()));
        self.write_to(&mut out);
        out
    }

    /// Parses a signature block whose auth path has exactly `depth` entries.
    pub fn from_bytes(b: &[u8], depth: usize) -> Result<Self, CryptoError> {
        if b.len() != Self::encoded_len(depth) {
            return Err(CryptoError::Malformed(format!(
                "signature block is {} bytes, expected {} for depth {depth}",
                b.len(),
                Self::encoded_len(depth)
            )));
        }
        let key_index = u32::from_be_bytes(b[..4].try_into().unwrap());
        let mut at = 4;
        let auth_path = b[at..at + 32 * depth]
            .chunks_exact(32)
            .map(|c| c.try_into().unwrap())
            .collect();
        at += 32 * depth;
        let leaf_pubkey = LamportPublicKey::from_bytes(&b[at..at + lamport::PUBLIC_KEY_LEN])
            .expect("length checked");
        at += lamport::PUBLIC_KEY_LEN;
        let revealed = b[at..]
            .chunks_exact(32)
            .map(|c| c.try_into().unwrap())
            .collect();
        Ok(Self {
            key_index,
            auth_path,
            leaf_pubkey,
            revealed,
        })
    }
}

pub fn check_pool_size(pool_size: usize) -> Result<(), CryptoError> {
    if pool_size == 0 || !pool_size.is_power_of_two() || pool_size > MAX_POOL_SIZE {
        return Err(CryptoError::PoolSize(pool_size));
    }
    Ok(())
}

pub fn derive_leaf(seed: &Hash, index: u32) -> LamportKeyPair {
    let mut material = [0u8; 36];
    material[..32].copy_from_slice(seed);
    material[32..].copy_from_slice(&index.to_be_bytes());
    let mut rng = ChaCha20Rng::from_seed(sha256(&material));
    lamport_keygen(&mut rng)
}

pub struct NodeKeyState {
    seed: Hash,
    tree: MerkleTree,
    next_unused: u32,
}

impl std::fmt::Debug for NodeKeyState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeKeyState")
            .field("root", &hex::encode(self.root()))
            .field("pool_size", &self.pool_size())
            .field("next_unused", &self.next_unused)
            .finish()
    }
}

impl NodeKeyState {
    pub fn from_seed(seed: Hash, pool_size: usize) -> Result<Self, CryptoError> {
        check_pool_size(pool_size)?;
        let leaves: Vec<Hash> = (0..pool_size as u32)
            .map(|j| derive_leaf(&seed, j).public().leaf_hash())
            .collect();
        let tree = MerkleTree::build(&leaves)?;
        Ok(Self {
            seed,
            tree,
            next_unused: 0,
        })
    }

    pub fn root(&self) -> Hash {
        self.tree.root()
    }

    pub fn pool_size(&self) -> usize {
        self.tree.leaf_count()
    }

    pub fn next_unused(&self) -> u32 {
        self.next_unused
    }

    pub fn remaining(&self) -> usize {
        self.pool_size() - self.next_unused as usize
    }

    /// Restores the counter after a restart. Never moves backwards.
    pub fn advance_to(&mut self, next_unused: u32) {
        self.next_unused = self
            .next_unused
            .max(next_unused.min(self.pool_size() as u32));
    }

    pub fn sign_package(&mut self, plaintext: &[u8]) -> Result<PackageSignature, CryptoError> {
        let pool = self.pool_size();
        if self.next_unused as usize >= pool {
            return Err(CryptoError::PoolExhausted { pool });
        }
        let key_index = self.next_unused;
        self.next_unused += 1;
        let mut kp = derive_leaf(&self.seed, key_index);
        let revealed = lamport_sign(&mut kp, plaintext)?;
        Ok(PackageSignature {
            key_index,
            auth_path: self.tree.prove(key_index as usize)?,
            leaf_pubkey: kp.public().clone(),
            revealed,
        })
    }
}

/// True iff the revealed secrets match the leaf key and the leaf key is
/// certified by `root` at `key_index`.
pub fn verify_package(root: &Hash, plaintext: &[u8], sig: &PackageSignature) -> bool {
    lamport_verify(&sig.leaf_pubkey, plaintext, &sig.revealed)
        && merkle_verify(
            root,
            &sig.leaf_pubkey.leaf_hash(),
            sig.key_index as usize,
            &sig.auth_path,
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_advances_and_exhausts() {
        let mut ks = NodeKeyState::from_seed([9; 32], 4).unwrap();
        for i in 0..4 {
            let sig = ks.sign_package(b"payload").unwrap();
            assert_eq!(sig.key_index, i);
            assert_eq!(sig.auth_path.len(), 2);
            assert!(verify_package(&ks.root(), b"payload", &sig));
        }
        assert!(matches!(
            ks.sign_package(b"payload"),
            Err(CryptoError::PoolExhausted { pool: 4 })
        ));
    }

    #[test]
    fn wrong_root_or_index_fails() {
        let mut ks = NodeKeyState::from_seed([1; 32], 8).unwrap();
        let other = NodeKeyState::from_seed([2; 32], 8).unwrap();
        let mut sig = ks.sign_package(b"m").unwrap();
        assert!(!verify_package(&other.root(), b"m", &sig));
        sig.key_index = 1;
        assert!(!verify_package(&ks.root(), b"m", &sig));
    }

    #[test]
    fn pool_size_validation() {
        assert!(NodeKeyState::from_seed([0; 32], 0).is_err());
        assert!(NodeKeyState::from_seed([0; 32], 6).is_err());
        assert_eq!(NodeKeyState::from_seed([0; 32], 1).unwrap().pool_size(), 1);
    }

    #[test]
    fn signature_bytes_round_trip() {
        let mut ks = NodeKeyState::from_seed([5; 32], 16).unwrap();
        let sig = ks.sign_package(b"abc").unwrap();
        let bytes = sig.to_bytes();
        assert_eq!(bytes.len(), PackageSignature::encoded_len(4));
        assert_eq!(PackageSignature::from_bytes(&bytes, 4).unwrap(), sig);
        assert!(PackageSignature::from_bytes(&bytes, 3).is_err());
    }

    #[test]
    fn counter_restore_is_monotone() {
        let mut ks = NodeKeyState::from_seed([5; 32], 8).unwrap();
        ks.advance_to(5);
        ks.advance_to(2);
        assert_eq!(ks.next_unused(), 5);
        ks.advance_to(100);
        assert_eq!(ks.remaining(), 0);
    }
}
