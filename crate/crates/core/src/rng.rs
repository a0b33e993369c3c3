//! Seed derivation. Every random stream in a run is a ChaCha8 stream keyed by
//! the run seed, so any stream can be reconstructed from `(seed, stream)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod streams {
    pub const GENERATOR_INIT: u64 = 1;
    pub const D_IMG_INIT: u64 = 2;
    pub const D_FEAT_INIT: u64 = 3;
    /// Data order for epoch `e` uses `DATA_BASE + e`.
    pub const DATA_BASE: u64 = 1 << 32;
}

pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
