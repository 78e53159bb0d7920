//! Deterministic, counter-based random streams.
//!
//! A stream is keyed by `(seed, stream_id)` and expands to a ChaCha8 keystream
//! whose position is the draw counter. Child streams are derived by hashing a
//! label into a fresh stream id, so sampling never depends on call order
//! elsewhere in the program.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    /// Child stream for a named purpose (`"aug"`, `"init"`, ...).
    pub fn derive(&self, label: &str) -> Self {
        Self {
            seed: self.seed,
            stream_id: mix(self.stream_id ^ fnv1a(label.as_bytes())),
        }
    }

    /// Child stream for an integer key, e.g. a sample index or epoch.
    pub fn derive_index(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: mix(self.stream_id.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(index | 1) ^ mix(index)),
        }
    }

    /// Generator positioned at counter 0 of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Free-function form of [`RngStream::derive`].
pub fn rng_derive(base: RngStream, label: &str) -> RngStream {
    base.derive(label)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(s: RngStream, n: usize) -> Vec<u64> {
        let mut r = s.rng();
        (0..n).map(|_| r.random::<u64>()).collect()
    }

    #[test]
    fn same_label_same_sequence() {
        let base = RngStream::new(7);
        assert_eq!(draws(base.derive("aug"), 64), draws(base.derive("aug"), 64));
    }

    #[test]
    fn distinct_labels_differ() {
        let base = RngStream::new(7);
        let a = draws(base.derive("aug"), 64);
        let b = draws(base.derive("init"), 64);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn distinct_seeds_differ() {
        let a = draws(RngStream::new(7).derive("aug"), 64);
        let b = draws(RngStream::new(8).derive("aug"), 64);
        assert_ne!(a, b);
    }

    #[test]
    fn index_children_are_distinct() {
        let base = RngStream::new(1).derive("samples");
        let ids: std::collections::HashSet<u64> =
            (0..1000).map(|i| base.derive_index(i).stream_id).collect();
        assert_eq!(ids.len(), 1000);
    }

    #[test]
    fn known_first_draw_is_platform_independent() {
        let first = draws(RngStream::new(7).derive("aug"), 1)[0];
        // regression pin: streams must not change across platforms or releases
        assert_eq!(first, 0xe9d7_62c2_6379_509c);
    }
}
