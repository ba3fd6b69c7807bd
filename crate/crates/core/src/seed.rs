//! Sub-seed derivation.
//!
//! Every random stream in a run is derived from one root seed by folding a
//! sequence of tags through SplitMix64:
//!
//! ```text
//! state = root
//! for tag in tags: state = splitmix64(state ^ splitmix64(tag))
//! ```
//!
//! Streams keyed by different tags are decorrelated, so per-class or
//! per-trial work can run in any order (or in parallel) without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every random stream in the crate.
pub type Rng = ChaCha8Rng;

/// Stream tags, so call sites do not collide by accident.
pub mod tag {
    pub const TRIAL: u64 = 0x7472_6961_6c00_0001;
    pub const CLASS_ORDER: u64 = 0x6f72_6465_7200_0002;
    pub const SESSION: u64 = 0x7365_7373_0000_0003;
    pub const REPLAY: u64 = 0x7265_706c_6179_0004;
    pub const AUGMENT: u64 = 0x6175_676d_0000_0005;
    pub const TRAIN: u64 = 0x7472_6169_6e00_0006;
    pub const SHOTS: u64 = 0x7368_6f74_7300_0007;
    pub const BENCH: u64 = 0x6265_6e63_6800_0008;
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(root, |state, &t| splitmix64(state ^ splitmix64(t)))
}

pub fn rng(root: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(root, tags))
}
