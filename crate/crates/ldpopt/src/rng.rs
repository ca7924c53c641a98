//! Counter-based random streams.
//!
//! Every draw in the crate comes from a ChaCha stream keyed by
//! `(seed, domain, a)` with stream id `b`, so a draw depends only on its
//! coordinates and never on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha12Rng;

/// Stream domains. Distinct domains never share key material.
pub mod domain {
    pub const NOISE: u64 = 1;
    pub const PENALTY: u64 = 2;
    pub const SHARE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const GRAPH: u64 = 5;
    pub const DATA: u64 = 6;
    pub const COORD: u64 = 7;
    pub const WEIGHT: u64 = 8;
    pub const MONTE_CARLO: u64 = 9;
    pub const REPLICATION: u64 = 10;
}

pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.to_le_bytes());
    h.update(a.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(b);
    rng
}

/// Derives an independent child seed, e.g. one per replication.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, domain, index, 0).next_u64()
}
