//! Reproducible random streams.
//!
//! An [`RngStream`] is a ChaCha8 keystream addressed by a 128-bit key, a
//! 64-bit stream index and a word position. The ChaCha block function is a
//! pure function of (key, stream, block counter), so a stream yields the same
//! sequence on every platform and can be re-created anywhere from its
//! coordinates. Uniform reals are taken from the top 53 bits of each 64-bit
//! word and centred in their bin, giving values in the open interval (0, 1).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Source of uniform variates for the mechanisms.
///
/// The default `laplace` inverts the Laplace CDF at one uniform draw; test
/// doubles may override it to script exact noise values.
pub trait NoiseSource {
    /// Uniform draw in the open interval (0, 1).
    fn next_uniform(&mut self) -> f64;

    fn laplace(&mut self, scale: f64) -> f64 {
        laplace_inverse_cdf(self.next_uniform(), scale)
    }

    /// Provenance tag copied into noisy releases.
    fn seed_record(&self) -> u64 {
        0
    }
}

/// `x = -b * sgn(u - 1/2) * ln(1 - 2|u - 1/2|)`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let centred = u - 0.5;
    if centred == 0.0 {
        return 0.0;
    }
    -scale * centred.signum() * (-2.0 * centred.abs()).ln_1p()
}

#[derive(Debug, Clone)]
pub struct RngStream {
    key: u128,
    stream: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(key: u128, stream: u64) -> Self {
        let mut seed = [0u8; 32];
        seed[..16].copy_from_slice(&key.to_le_bytes());
        let mut core = ChaCha8Rng::from_seed(seed);
        core.set_stream(stream);
        Self { key, stream, core }
    }

    pub fn key(&self) -> u128 {
        self.key
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit keystream words consumed so far.
    pub fn position(&self) -> u128 {
        self.core.get_word_pos()
    }

    pub fn seek(&mut self, word_pos: u128) {
        self.core.set_word_pos(word_pos);
    }

    /// Child stream for a sub-task (e.g. one jurisdiction). The child key
    /// mixes the parent key with the parent stream index; the child index
    /// becomes the child's stream.
    pub fn fork(&self, child: u64) -> RngStream {
        let hi = (self.key >> 64) as u64;
        let lo = self.key as u64;
        let s = splitmix64(self.stream ^ 0x6a09_e667_f3bc_c909);
        let new_hi = splitmix64(hi ^ s);
        let new_lo = splitmix64(lo ^ s.rotate_left(32) ^ 0xbb67_ae85_84ca_a73b);
        RngStream::new((u128::from(new_hi) << 64) | u128::from(new_lo), child)
    }
}

impl NoiseSource for RngStream {
    fn next_uniform(&mut self) -> f64 {
        ((self.core.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    fn seed_record(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.core.fill_bytes(dst)
    }
}

/// A noise source that can hand out independent child streams.
pub trait ForkableNoise: NoiseSource + Sized {
    fn fork(&self, child: u64) -> Self;
}

impl ForkableNoise for RngStream {
    fn fork(&self, child: u64) -> Self {
        RngStream::fork(self, child)
    }
}

/// Noise source that always returns the median, i.e. zero Laplace noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn next_uniform(&mut self) -> f64 {
        0.5
    }

    fn laplace(&mut self, _scale: f64) -> f64 {
        0.0
    }
}

impl ForkableNoise for ZeroNoise {
    fn fork(&self, _child: u64) -> Self {
        ZeroNoise
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_coordinates_same_sequence() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn seek_replays() {
        let mut a = RngStream::new(1, 2);
        let _ = a.next_u64();
        let pos = a.position();
        let x = a.next_u64();
        a.seek(pos);
        assert_eq!(a.next_u64(), x);
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut s = RngStream::new(3, 0);
        for _ in 0..10_000 {
            let u = s.next_uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn streams_and_forks_differ() {
        let a = RngStream::new(9, 0).next_u64_once();
        let b = RngStream::new(9, 1).next_u64_once();
        let c = RngStream::new(9, 0).fork(0).next_u64_once();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(c, RngStream::new(9, 0).fork(0).next_u64_once());
    }

    #[test]
    fn pinned_first_draw() {
        // Guards the documented generator: changing it breaks reproducibility.
        let mut s = RngStream::new(0, 0);
        let first = s.next_u64();
        let mut again = RngStream::new(0, 0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, ChaCha8Rng::from_seed([0; 32]).next_u64());
    }

    #[test]
    fn inverse_cdf_values() {
        assert_eq!(laplace_inverse_cdf(0.5, 1.0), 0.0);
        assert!((laplace_inverse_cdf(0.75, 1.0) - 0.5f64.ln().abs()).abs() < 1e-15);
        assert!((laplace_inverse_cdf(0.25, 1.0) + 0.5f64.ln().abs()).abs() < 1e-15);
    }

    trait Once {
        fn next_u64_once(self) -> u64;
    }

    impl Once for RngStream {
        fn next_u64_once(mut self) -> u64 {
            self.next_u64()
        }
    }
}
