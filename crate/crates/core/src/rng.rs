//! Deterministic random streams.
//!
//! Every stochastic stage draws from its own [`RngStream`], keyed by the
//! master seed, the replication index and a stage tag. A stream never depends
//! on the order in which other streams were created, so adding grid cells or
//! reordering work leaves existing replications bit-identical.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; stable across platforms and compiler versions.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Identifies one substream: a replication index, a stage tag and an
/// optional extra discriminator (e.g. the sample size of a grid cell).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey<'a> {
    pub replication: u64,
    pub tag: &'a str,
    pub extra: u64,
}

impl<'a> StreamKey<'a> {
    pub fn new(replication: u64, tag: &'a str) -> Self {
        Self { replication, tag, extra: 0 }
    }

    pub fn with_extra(mut self, extra: u64) -> Self {
        self.extra = extra;
        self
    }
}

/// A counter-based ChaCha stream derived from `(master_seed, key)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    /// Root stream for a master seed (replication 0, empty tag).
    pub fn from_seed(master_seed: u64) -> Self {
        Self::derive(master_seed, StreamKey::new(0, ""))
    }

    pub fn derive(master_seed: u64, key: StreamKey<'_>) -> Self {
        let mut seed = [0u8; 32];
        let mut s = master_seed;
        for chunk in seed.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(seed);
        let stream = splitmix64(splitmix64(key.replication ^ tag_hash(key.tag)).wrapping_add(splitmix64(key.extra ^ GOLDEN)));
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
