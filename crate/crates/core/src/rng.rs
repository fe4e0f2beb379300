//! Seeded random streams and hashing.
//!
//! Every stochastic choice in the toolkit (parameter init, feature noise,
//! corpus sampling) flows through these generators so that identical seeds
//! produce bit-identical artifacts across runs and platforms.

/// SplitMix64 stream. Small state, full 2^64 period, good avalanche.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Combines seed components into one 64-bit stream seed.
///
/// Used to derive independent sub-streams, e.g. per (corpus seed, language,
/// utterance index) or per (model seed, parameter name).
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3u64; // arbitrary nonzero start
    for &p in parts {
        let mut sm = SplitMix64::new(acc ^ p);
        acc = sm.next_u64();
    }
    acc
}

/// FNV-1a over UTF-8 bytes, for seeding streams by name.
pub fn hash_str(s: &str) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic generator with uniform and Gaussian draws.
#[derive(Debug, Clone)]
pub struct Rng {
    sm: SplitMix64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            sm: SplitMix64::new(seed),
            spare_normal: None,
        }
    }

    /// Sub-stream derived from this generator's seed and extra components.
    pub fn derive(seed: u64, parts: &[u64]) -> Self {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(seed);
        all.extend_from_slice(parts);
        Rng::from_seed(mix(&all))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.sm.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.sm.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Modulo bias is < n / 2^64, negligible for the corpus sizes used here.
        self.sm.next_u64() % n
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; caches the paired draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0,1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}
