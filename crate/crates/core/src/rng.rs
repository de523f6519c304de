//! Counter-based random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream whose key
//! is the master seed and whose stream id is a hash of a fixed tuple
//! (purpose, scene, illumination, config rank, shot/aug ...). Results are
//! therefore a pure function of those coordinates, independent of which
//! worker evaluates a scene or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod purpose {
    pub const SCENE: u64 = 0x5343_454e;
    pub const CAPTURE: u64 = 0x4341_5054;
    pub const GEOMETRIC: u64 = 0x4745_4f4d;
    pub const PHOTOMETRIC: u64 = 0x5048_4f54;
    pub const CSA: u64 = 0x4353_4131;
    pub const PROVIDER: u64 = 0x5052_4f56;
    pub const REFERENCE: u64 = 0x5245_4652;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a coordinate tuple.
pub fn hash_parts(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

/// A ChaCha8 stream keyed on `master` with stream id derived from `parts`.
pub fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(hash_parts(parts));
    rng
}

/// Cheap deterministic sequence for bulk noise where a full ChaCha stream
/// per call would dominate the cost.
#[derive(Debug, Clone)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix(seed)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Zero-mean, unit-variance uniform deviate on [-sqrt(3), sqrt(3)).
    #[inline]
    pub fn centered(&mut self) -> f64 {
        (2.0 * self.unit() - 1.0) * 3f64.sqrt()
    }

    /// Standard normal via Box-Muller (one of the pair is discarded).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl rand::RngCore for SplitMix {
    fn next_u32(&mut self) -> u32 {
        (SplitMix::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SplitMix::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let b = SplitMix::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&b[..chunk.len()]);
        }
    }
}
