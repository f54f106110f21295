//! Counter-based normal variates.
//!
//! Every draw is addressed by `(master_seed, sample, step, component)`; the
//! value never depends on how many other draws happened before it or on which
//! thread asked for it. The keystream is ChaCha8: the key is derived from the
//! master seed and the sample index, the stream id is the component and the
//! word position is the step index.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const WORDS_PER_DRAW: u128 = 4;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    master_seed: u64,
}

impl CounterRng {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Key for one Monte Carlo sample. Depends on nothing but the master seed
    /// and the sample index.
    pub fn sample_key(&self, sample: u64) -> [u8; 32] {
        let mut state = self.master_seed ^ sample.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    fn stream(&self, sample: u64, step: u64, component: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.sample_key(sample));
        rng.set_stream(component);
        rng.set_word_pos(step as u128 * WORDS_PER_DRAW);
        rng
    }

    /// Two uniforms, the first in `(0, 1]` and the second in `[0, 1)`.
    pub fn uniform_pair(&self, sample: u64, step: u64, component: u64) -> (f64, f64) {
        let mut rng = self.stream(sample, step, component);
        let a = rng.next_u64() >> 11;
        let b = rng.next_u64() >> 11;
        let scale = 1.0 / (1u64 << 53) as f64;
        ((a + 1) as f64 * scale, b as f64 * scale)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&self, sample: u64, step: u64, component: u64) -> f64 {
        self.uniform_pair(sample, step, component).1
    }

    /// Standard normal variate (Box–Muller, cosine branch).
    pub fn normal(&self, sample: u64, step: u64, component: u64) -> f64 {
        let (u1, u2) = self.uniform_pair(sample, step, component);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
