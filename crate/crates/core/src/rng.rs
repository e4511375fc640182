//! Minimal deterministic pseudo-random source for sampled diagnostics.
//!
//! Sampled contractiveness checks and probe-point generation only need a
//! reproducible stream of uniforms; SplitMix64 gives that in a handful of
//! lines with no platform-dependent state.

/// SplitMix64 generator (Steele, Lea, Flood 2014). Passes BigCrush for the
/// uses here; one u64 of state, seedable, bit-reproducible everywhere.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 mantissa bits, offset by half an ulp so 0 is never returned.
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
