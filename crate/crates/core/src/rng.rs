//! Seeded random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha8 generator
//! keyed by `(seed, purpose, index)`. The seed selects the key, the purpose
//! and index select one of 2^64 independent streams, so data order,
//! dropout masks, augmentation and initialization never share state and can
//! each be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Augment = 4,
    Split = 5,
    Synth = 6,
    Oracle = 7,
}

/// Generator for one stream. `index` occupies the low 56 bits of the stream id.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (index & 0x00ff_ffff_ffff_ffff));
    rng
}

/// Stable 64-bit digest of a byte string (first 8 bytes of SHA-256, little endian).
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Combine a base seed with a sub-key, e.g. an epoch number.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    let mut buf = [0u8; 16];
    buf[..8].copy_from_slice(&seed.to_le_bytes());
    buf[8..].copy_from_slice(&key.to_le_bytes());
    hash64(&buf)
}
