//! Counter-based random draws.
//!
//! Every draw is addressed by a [`DrawKey`] `(seed, trial, robot, purpose, k)`.
//! The key picks a ChaCha8 key from `(seed, trial, robot)`, a ChaCha stream
//! from `purpose` and a fixed four-word slot from `k`, so a value never
//! depends on how many other values were drawn before it or in which order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a draw is used for. Each purpose has its own ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Gamma = 0,
    Noise1 = 1,
    Noise2 = 2,
    Init1 = 3,
    Init2 = 4,
}

/// Full address of a single draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawKey {
    pub seed: u64,
    pub trial: u64,
    pub robot: u64,
    pub purpose: Purpose,
    pub k: u64,
}

// u32 words reserved per slot: two u64 values.
const WORDS_PER_SLOT: u128 = 4;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chacha_key(seed: u64, trial: u64, robot: u64) -> [u8; 32] {
    let mut state = seed;
    let mut mix = splitmix64(&mut state);
    state ^= trial.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ mix;
    mix = splitmix64(&mut state);
    state ^= robot.wrapping_mul(0xA076_1D64_78BD_642F) ^ mix;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Sequential reader over one `(seed, trial, robot, purpose)` stream.
///
/// Reading slot `k` after slot `k - 1` avoids reseeking; any other order
/// seeks, with identical results.
#[derive(Clone, Debug)]
pub struct DrawStream {
    rng: ChaCha8Rng,
    next_slot: u64,
}

impl DrawStream {
    pub fn new(seed: u64, trial: u64, robot: u64, purpose: Purpose) -> Self {
        let mut rng = ChaCha8Rng::from_seed(chacha_key(seed, trial, robot));
        rng.set_stream(purpose as u64);
        Self { rng, next_slot: 0 }
    }

    /// The two raw 64-bit words at slot `k`.
    pub fn slot(&mut self, k: u64) -> (u64, u64) {
        if k != self.next_slot {
            self.rng.set_word_pos(k as u128 * WORDS_PER_SLOT);
        }
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        self.next_slot = k + 1;
        (a, b)
    }

    /// Uniform on `[0, 1)` at slot `k`.
    pub fn uniform(&mut self, k: u64) -> f64 {
        unit_open_right(self.slot(k).0)
    }

    /// `true` with probability `p` at slot `k`.
    pub fn bernoulli(&mut self, k: u64, p: f64) -> bool {
        self.uniform(k) < p
    }

    /// Standard normal at slot `k` (Box-Muller, cosine branch).
    pub fn standard_normal(&mut self, k: u64) -> f64 {
        let (a, b) = self.slot(k);
        let u1 = unit_open_left(a);
        let u2 = unit_open_right(b);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Draws addressed by the key directly, without keeping a stream around.
pub fn draw_uniform(key: DrawKey) -> f64 {
    DrawStream::new(key.seed, key.trial, key.robot, key.purpose).uniform(key.k)
}

pub fn draw_standard_normal(key: DrawKey) -> f64 {
    DrawStream::new(key.seed, key.trial, key.robot, key.purpose).standard_normal(key.k)
}

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn unit_open_right(x: u64) -> f64 {
    (x >> 11) as f64 * INV_2_53
}

#[inline]
fn unit_open_left(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * INV_2_53
}

/// The per-robot set of streams a simulation trial reads from.
#[derive(Clone, Debug)]
pub struct RobotStreams {
    pub gamma: DrawStream,
    pub noise: [DrawStream; 2],
    pub init: [DrawStream; 2],
}

impl RobotStreams {
    pub fn new(seed: u64, trial: u64, robot: u64) -> Self {
        let s = |p| DrawStream::new(seed, trial, robot, p);
        Self {
            gamma: s(Purpose::Gamma),
            noise: [s(Purpose::Noise1), s(Purpose::Noise2)],
            init: [s(Purpose::Init1), s(Purpose::Init2)],
        }
    }
}
