//! Reproducible random streams.
//!
//! Every stochastic routine draws from a ChaCha8 generator keyed by a master
//! seed and positioned on a stream derived from an index path, e.g.
//! `(point, sample)`. The stream for a given path never depends on how work
//! is scheduled, so ensembles are bitwise reproducible under any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an index path into a single stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C908u64;
    for &p in path {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// Derives a child seed from a master seed and an index path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    splitmix64(master ^ stream_id(path))
}

/// Generator for the given master seed and index path.
pub fn rng_for(master: u64, path: &[u64]) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(path));
    rng
}
