//! Seeded, counter-based random streams.
//!
//! Every source of randomness in the crate is a [`Stream`]: a ChaCha8
//! generator keyed by a 64-bit seed plus a stream id that separates the
//! purposes (initialization, data, optimizer steps, ...) of one run. Two
//! runs with the same seed consume draws in the same documented order and
//! are therefore bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream ids. Independent purposes never share a stream.
pub mod domain {
    pub const INIT: u64 = 0;
    pub const TEACHER: u64 = 1;
    pub const DATA: u64 = 2;
    pub const STEPS: u64 = 3;
    /// Verification checks use `VERIFY_BASE + check index`.
    pub const VERIFY_BASE: u64 = 16;
}

/// A fresh stream for `(seed, domain)`.
pub fn stream(seed: u64, domain: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain);
    rng
}
