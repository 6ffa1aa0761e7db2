//! AES-256 in CBC mode with zero padding.
//!
//! Zero padding alone cannot be undone for payloads that end in zero bytes,
//! so callers carry the plaintext length next to the ciphertext.

use aes::cipher::{BlockCipherDecrypt, BlockCipherEncrypt, KeyInit};
use aes::Aes256;

use crate::CryptoError;

pub const BLOCK: usize = 16;

pub fn padded_len(len: usize) -> usize {
    len.div_ceil(BLOCK) * BLOCK
}

pub fn encrypt_envelope(key: &[u8; 32], iv: &[u8; 16], plaintext: &[u8]) -> Vec<u8> {
    let cipher = Aes256::new(key.into());
    let mut out = plaintext.to_vec();
    out.resize(padded_len(plaintext.len()), 0);
    let mut chain = *iv;
    for block in out.chunks_exact_mut(BLOCK) {
        for (b, c) in block.iter_mut().zip(chain) {
            *b ^= c;
        }
        let block: &mut [u8; BLOCK] = block.try_into().expect("exact chunk");
        cipher.encrypt_block(block.into());
        chain = *block;
    }
    out
}

pub fn decrypt_envelope(
    key: &[u8; 32],
    iv: &[u8; 16],
    ciphertext: &[u8],
    plaintext_len: usize,
) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() % BLOCK != 0 {
        return Err(CryptoError::CiphertextLength(ciphertext.len()));
    }
    if plaintext_len > ciphertext.len() {
        return Err(CryptoError::PlaintextLength {
            len: plaintext_len,
            capacity: ciphertext.len(),
        });
    }
    let cipher = Aes256::new(key.into());
    let mut out = ciphertext.to_vec();
    let mut chain = *iv;
    for block in out.chunks_exact_mut(BLOCK) {
        let block: &mut [u8; BLOCK] = block.try_into().expect("exact chunk");
        let next = *block;
        cipher.decrypt_block(block.into());
        for (b, c) in block.iter_mut().zip(chain) {
            *b ^= c;
        }
        chain = next;
    }
    out.truncate(plaintext_len);
    Ok(out)
}
