//! Seedable, platform-independent random generator (xoshiro256**).
//!
//! Training determinism rests on this generator: dropout masks, weight
//! fillers and epoch shuffles all draw from streams derived from one master
//! seed, so the same seed produces the same run on every platform.

/// xoshiro256** with splitmix64 seeding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Xoshiro256 {
    s: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Xoshiro256 {
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Xoshiro256 { s }
    }

    pub fn state(&self) -> [u64; 4] {
        self.s
    }

    pub fn from_state(s: [u64; 4]) -> Self {
        Xoshiro256 { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (one draw per call, deterministic).
    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        // Reject u1 == 0 so the log is finite.
        let mut u1 = self.next_f64();
        while u1 <= 0.0 {
            u1 = self.next_f64();
        }
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }
}

/// Derives an independent stream seed from a master seed and a purpose tag.
///
/// Streams are stateless given (master, tags): a restored run re-derives the
/// exact dropout mask or shuffle order for any iteration without replaying
/// the generator history.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut sm = master ^ tag.rotate_left(17) ^ index.rotate_left(41);
    let a = splitmix64(&mut sm);
    let b = splitmix64(&mut sm);
    a ^ b.rotate_left(29)
}

/// Stream purpose tags. Values are stable; they are part of the determinism
/// contract between snapshots.
pub mod stream {
    pub const FILLER: u64 = 0x01;
    pub const DROPOUT: u64 = 0x02;
    pub const SHUFFLE: u64 = 0x03;
    pub const SYNTH_DATA: u64 = 0x04;
    pub const TIME_INPUT: u64 = 0x05;
}
