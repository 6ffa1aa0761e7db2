//! Lamport one-time signatures over SHA-256.
//!
//! A key pair holds 256 pairs of 32-byte secrets; the public key is their
//! element-wise SHA-256. Signing reveals, for every bit `i` of
//! `SHA-256(message)`, the secret `secret[i][bit]`. Bit `i` is bit
//! `7 - i % 8` of digest byte `i / 8` (most significant first).

use rand::CryptoRng;

use crate::{sha256, CryptoError, Hash};

pub const BITS: usize = 256;
/// Serialized public key: 2 x 256 hashes, index-major (`[i][0]`, `[i][1]`, ...).
pub const PUBLIC_KEY_LEN: usize = 2 * BITS * 32;
pub const SIGNATURE_LEN: usize = BITS * 32;

#[derive(Clone, PartialEq, Eq)]
pub struct LamportPublicKey(pub Box<[[Hash; 2]; BITS]>);

impl std::fmt::Debug for LamportPublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "LamportPublicKey({})",
            hex::encode(&self.leaf_hash()[..8])
        )
    }
}

impl LamportPublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PUBLIC_KEY_LEN);
        for pair in self.0.iter() {
            out.extend_from_slice(&pair[0]);
            out.extend_from_slice(&pair[1]);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != PUBLIC_KEY_LEN {
            return None;
        }
        let mut pk = Box::new([[[0u8; 32]; 2]; BITS]);
        for (i, chunk) in b.chunks_exact(64).enumerate() {
            pk[i][0].copy_from_slice(&chunk[..32]);
            pk[i][1].copy_from_slice(&chunk[32..]);
        }
        Some(Self(pk))
    }

    /// Merkle leaf for this key: SHA-256 of the serialized public key.
    pub fn leaf_hash(&self) -> Hash {
        sha256(&self.to_bytes())
    }
}

pub struct LamportKeyPair {
    secret: Box<[[Hash; 2]; BITS]>,
    public: LamportPublicKey,
    used: bool,
}

impl LamportKeyPair {
    pub fn public(&self) -> &LamportPublicKey {
        &self.public
    }

    pub fn is_used(&self) -> bool {
        self.used
    }

    #[cfg(test)]
    pub(crate) fn secret(&self, i: usize, bit: usize) -> &Hash {
        &self.secret[i][bit]
    }
}

impl Drop for LamportKeyPair {
    fn drop(&mut self) {
        for pair in self.secret.iter_mut() {
            pair[0].fill(0);
            pair[1].fill(0);
        }
    }
}

pub fn digest_bit(digest: &Hash, i: usize) -> usize {
    usize::from((digest[i / 8] >> (7 - i % 8)) & 1)
}

pub fn lamport_keygen<R: CryptoRng + ?Sized>(rng: &mut R) -> LamportKeyPair {
    let mut secret = Box::new([[[0u8; 32]; 2]; BITS]);
    let mut public = Box::new([[[0u8; 32]; 2]; BITS]);
    for i in 0..BITS {
        for b in 0..2 {
            rng.fill_bytes(&mut secret[i][b]);
            public[i][b] = sha256(&secret[i][b]);
        }
    }
    LamportKeyPair {
        secret,
        public: LamportPublicKey(public),
        used: false,
    }
}

/// Reveals one secret per digest bit and marks the pair used.
pub fn lamport_sign(kp: &mut LamportKeyPair, msg: &[u8]) -> Result<Vec<Hash>, CryptoError> {
    if kp.used {
        return Err(CryptoError::KeyReuse);
    }
    kp.used = true;
    let digest = sha256(msg);
    Ok((0..BITS)
        .map(|i| kp.secret[i][digest_bit(&digest, i)])
        .collect())
}

pub fn lamport_verify(public: &LamportPublicKey, msg: &[u8], revealed: &[Hash]) -> bool {
    if revealed.len() != BITS {
        return false;
    }
    let digest = sha256(msg);
    revealed
        .iter()
        .enumerate()
        .all(|(i, r)| sha256(r) == public.0[i][digest_bit(&digest, i)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn fixed_seed_reproduces_public_key() {
        let a = lamport_keygen(&mut rng(7));
        let b = lamport_keygen(&mut rng(7));
        assert_eq!(a.public(), b.public());
        assert_ne!(a.public(), lamport_keygen(&mut rng(8)).public());
    }

    #[test]
    fn public_elements_are_hashes_of_secrets() {
        let kp = lamport_keygen(&mut rng(1));
        let mut r = rng(99);
        for _ in 0..32 {
            let i = (r.next_u32() as usize) % BITS;
            let b = (r.next_u32() as usize) % 2;
            assert_eq!(kp.public().0[i][b], sha256(kp.secret(i, b)));
        }
    }

    #[test]
    fn independent_seeds_share_no_secret() {
        let a = lamport_keygen(&mut rng(11));
        let b = lamport_keygen(&mut rng(12));
        let mut seen = std::collections::HashSet::new();
        for i in 0..BITS {
            for bit in 0..2 {
                assert!(seen.insert(*a.secret(i, bit)));
            }
        }
        for i in 0..BITS {
            for bit in 0..2 {
                assert!(!seen.contains(b.secret(i, bit)));
            }
        }
    }

    #[test]
    fn sign_reveals_by_digest_bit_and_verifies() {
        let mut kp = lamport_keygen(&mut rng(3));
        let msg = b"temperature=31.5";
        let digest = sha256(msg);
        let (s0, s1) = (*kp.secret(0, 0), *kp.secret(0, 1));
        let sig = lamport_sign(&mut kp, msg).unwrap();
        assert_eq!(sig[0], if digest_bit(&digest, 0) == 1 { s1 } else { s0 });
        assert!(lamport_verify(kp.public(), msg, &sig));
        assert!(kp.is_used());
    }

    #[test]
    fn second_signature_is_refused() {
        let mut kp = lamport_keygen(&mut rng(4));
        lamport_sign(&mut kp, b"one").unwrap();
        assert!(matches!(
            lamport_sign(&mut kp, b"two"),
            Err(CryptoError::KeyReuse)
        ));
    }

    #[test]
    fn truncated_signature_fails() {
        let mut kp = lamport_keygen(&mut rng(5));
        let sig = lamport_sign(&mut kp, b"msg").unwrap();
        assert!(!lamport_verify(kp.public(), b"msg", &sig[..255]));
        assert!(!lamport_verify(kp.public(), b"msg", &[]));
    }

    #[test]
    fn digest_bits_are_msb_first() {
        let mut d = [0u8; 32];
        d[0] = 0b1000_0001;
        assert_eq!(digest_bit(&d, 0), 1);
        assert_eq!(digest_bit(&d, 1), 0);
        assert_eq!(digest_bit(&d, 7), 1);
    }

    #[test]
    fn public_key_bytes_round_trip() {
        let kp = lamport_keygen(&mut rng(6));
        let bytes = kp.public().to_bytes();
        assert_eq!(bytes.len(), PUBLIC_KEY_LEN);
        assert_eq!(&bytes[32..64], &kp.public().0[0][1]);
        assert_eq!(
            LamportPublicKey::from_bytes(&bytes).as_ref(),
            Some(kp.public())
        );
        assert!(LamportPublicKey::from_bytes(&bytes[1..]).is_none());
    }
}
