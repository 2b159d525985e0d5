//! Counter-based random streams.
//!
//! Draw `i` of the stream `(seed, label)` is a pure function of
//! `(seed, fnv1a(label), i)`: a SplitMix64 walk whose start point is derived
//! from the seed and the label hash. That buys three properties the rest of
//! the crate leans on:
//!
//! * identical `(seed, label, counter)` gives identical draws on every
//!   platform (pure u64 arithmetic + IEEE doubles);
//! * distinct labels give independent streams, so data generation, weight
//!   init and latent sampling never interleave;
//! * streams can be split per video / per step by deriving labeled children,
//!   which keeps parallel generation bit-reproducible for any worker count.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// SplitMix64 output mix; full-avalanche bijection on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: String,
    base: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: &str) -> Self {
        let base = mix(mix(seed ^ GOLDEN) ^ fnv1a(stream.as_bytes()));
        SeededRng {
            seed,
            stream: stream.to_string(),
            base,
            counter: 0,
        }
    }

    /// Child stream labeled `parent/label`, counter reset to 0.
    pub fn derive(&self, label: &str) -> SeededRng {
        SeededRng::new(self.seed, &format!("{}/{}", self.stream, label))
    }

    /// Child stream labeled `parent/label#index` (per-video, per-step splits).
    pub fn derive_indexed(&self, label: &str, index: u64) -> SeededRng {
        SeededRng::new(self.seed, &format!("{}/{}#{}", self.stream, label, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn set_counter(&mut self, counter: u64) {
        self.counter = counter;
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        mix(self.base.wrapping_add(c.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0,1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Always consumes exactly two raw draws,
    /// so the counter advances deterministically per call.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0,1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_f32(&mut self, std: f32) -> f32 {
        (self.normal() as f32) * std
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in [0, n) via the 128-bit multiply trick (no modulo bias
    /// worth speaking of at these ranges).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() needs a nonempty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}
