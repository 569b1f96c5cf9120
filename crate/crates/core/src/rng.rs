//! Per-trajectory random streams.
//!
//! Stream `i` of a run seeded with `master_seed` starts from
//! `mix(master_seed ^ i * GOLDEN)`, expanded through four splitmix64 outputs
//! into a xoshiro256++ state. Any trajectory can be regenerated on its own,
//! so results do not depend on how trajectories are spread over threads.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 output finalizer.
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn splitmix64_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    splitmix64_mix(*state)
}

/// A xoshiro256++ generator bound to `(master_seed, stream_index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    state: [u64; 4],
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut sm = splitmix64_mix(master_seed ^ stream_index.wrapping_mul(GOLDEN));
        let mut state = [0u64; 4];
        for word in &mut state {
            *word = splitmix64_next(&mut sm);
        }
        if state == [0; 4] {
            // xoshiro's only fixed point
            state[0] = GOLDEN;
        }
        Self {
            master_seed,
            stream_index,
            state,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` (Lemire's widening multiply with
    /// rejection, so there is no modulo bias).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}
