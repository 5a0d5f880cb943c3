//! Deterministic sub-seeding.
//!
//! Every random stream in a run is derived from one master seed with
//! [`derive`]: `derive(seed, stream, index)` feeds the three words through
//! successive SplitMix64 finalizer rounds. Streams are identified by
//! [`Stream`] so that, for example, the exploration noise of episode `k` does
//! not depend on how the plant's projection matrix was drawn. A lesion run and
//! its baseline that share a seed therefore see identical noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    /// Plant projection weights `b`.
    Plant = 1,
    /// Perturbation of the initial policy.
    InitialPolicy = 2,
    /// Exploration noise; indexed by episode number.
    Exploration = 3,
    /// Test states used by convergence diagnostics.
    Diagnostics = 4,
    /// Replicate seeds of an experiment; indexed by replicate number.
    Replicate = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of `stream`'s `index`-th generator from `seed`.
pub fn derive(seed: u64, stream: Stream, index: u64) -> u64 {
    let h = splitmix64(seed);
    let h = splitmix64(h ^ stream as u64);
    splitmix64(h ^ index)
}

/// Generator for a derived stream.
pub fn rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}
