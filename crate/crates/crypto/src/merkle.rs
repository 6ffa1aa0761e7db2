//! Binary SHA-256 Merkle tree certifying a pool of one-time public keys.
//!
//! `parent = SHA-256(left || right)`. Leaf lists are padded up to a power of
//! two with `SHA-256("")`. An authentication path lists sibling hashes from
//! the leaf level upwards; bit `k` of the leaf index says whether the node
//! at level `k` is a right child.

use crate::{sha256, CryptoError, Hash};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` are the (padded) leaves, the last level is `[root]`.
    levels: Vec<Vec<Hash>>,
}

pub fn empty_leaf() -> Hash {
    sha256(b"")
}

fn parent(left: &Hash, right: &Hash) -> Hash {
    let mut buf = [0u8; 64];
    buf[..32].copy_from_slice(left);
    buf[32..].copy_from_slice(right);
    sha256(&buf)
}

impl MerkleTree {
    pub fn build(leaves: &[Hash]) -> Result<Self, CryptoError> {
        if leaves.is_empty() {
            return Err(CryptoError::EmptyTree);
        }
        let mut level = leaves.to_vec();
        level.resize(leaves.len().next_power_of_two(), empty_leaf());
        let mut levels = vec![level];
        while levels.last().unwrap().len() > 1 {
            let next = levels
                .last()
                .unwrap()
                .chunks_exact(2)
                .map(|p| parent(&p[0], &p[1]))
                .collect();
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn root(&self) -> Hash {
        self.levels.last().unwrap()[0]
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn leaf(&self, index: usize) -> Option<Hash> {
        self.levels[0].get(index).copied()
    }

    pub fn prove(&self, index: usize) -> Result<Vec<Hash>, CryptoError> {
        if index >= self.leaf_count() {
            return Err(CryptoError::IndexOutOfRange {
                index,
                leaves: self.leaf_count(),
            });
        }
        let mut path = Vec::with_capacity(self.depth());
        let mut i = index;
        for level in &self.levels[..self.depth()] {
            path.push(level[i ^ 1]);
            i >>= 1;
        }
        Ok(path)
    }
}

/// Recomputes the root from `leaf` and `path`, ordering each concatenation
/// by the corresponding bit of `index`.
pub fn merkle_verify(root: &Hash, leaf: &Hash, index: usize, path: &[Hash]) -> bool {
    if path.len() < usize::BITS as usize && index >> path.len() != 0 {
        return false;
    }
    let mut node = *leaf;
    for (k, sibling) in path.iter().enumerate() {
        node = if (index >> k) & 1 == 0 {
            parent(&node, sibling)
        } else {
            parent(sibling, &node)
        };
    }
    node == *root
}
