//! Counter-based random streams.
//!
//! Each draw is a pure function of (seed, stream_id, counter), so a stream
//! can be replayed from any recorded state and independent stream ids never
//! interleave. Advancing the counter is the only mutation.

use std::f64::consts::PI;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const COUNTER_SALT: u64 = 0x8cb9_2ba7_2f3d_8dd7;

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded, seekable random stream. `Copy` so callers can snapshot state for
/// checkpoints or replay a fixed mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream {
            seed,
            stream_id,
            counter: 0,
        }
    }

    pub fn from_state(seed: u64, stream_id: u64, counter: u64) -> Self {
        RngStream {
            seed,
            stream_id,
            counter,
        }
    }

    pub fn state(&self) -> (u64, u64, u64) {
        (self.seed, self.stream_id, self.counter)
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    // One raw word for the current counter; `lane` lets a single counter tick
    // yield several independent words (Box-Muller needs two).
    fn word(&self, lane: u64) -> u64 {
        let mut h = mix64(self.seed.wrapping_add(GOLDEN));
        h = mix64(h ^ self.stream_id.wrapping_add(STREAM_SALT));
        h = mix64(h ^ self.counter.wrapping_add(COUNTER_SALT));
        mix64(h ^ lane)
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.word(0);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in 0..n without modulo bias beyond 2^-64 (fixed-width multiply).
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller; consumes exactly one counter tick
    /// (the two uniforms come from distinct lanes of the same counter).
    pub fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite; u2 in [0, 1).
        let u1 = ((self.word(0) >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (self.word(1) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        self.counter = self.counter.wrapping_add(1);
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
