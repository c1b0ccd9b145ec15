//! Seed derivation. Every stochastic step draws from its own generator whose
//! seed is a pure function of the master seed, a generation counter and a
//! stream tag, so a lineage can be resumed from any generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams used within one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Stress = 3,
    Synthesis = 4,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed recorded for generation `counter` of a lineage.
pub fn generation_seed(master: u64, counter: u64) -> u64 {
    mix(mix(master) ^ counter)
}

pub fn stream_seed(master: u64, counter: u64, stream: Stream, attempt: u64) -> u64 {
    mix(generation_seed(master, counter) ^ mix((stream as u64) << 32 | attempt))
}

pub fn stream_rng(master: u64, counter: u64, stream: Stream, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, counter, stream, attempt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = stream_seed(7, 3, Stream::Stress, 0);
        assert_eq!(a, stream_seed(7, 3, Stream::Stress, 0));
        assert_ne!(a, stream_seed(7, 3, Stream::Shuffle, 0));
        assert_ne!(a, stream_seed(7, 4, Stream::Stress, 0));
        assert_ne!(a, stream_seed(7, 3, Stream::Stress, 1));
        assert_ne!(a, stream_seed(8, 3, Stream::Stress, 0));
    }
}
