//! Deterministic random streams.
//!
//! Every stochastic component draws from [`Rng`], a ChaCha8 stream keyed by a
//! 64-bit seed. Sub-seeds for runs, episodes and environments are derived with
//! SplitMix64 so that seeds are portable across builds and platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Identifier written into saved files next to every seed.
pub const RNG_ALGORITHM: &str = "chacha8-splitmix64";

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One SplitMix64 output for `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(master, stream, index)`.
///
/// `stream` separates purposes (environment, swarm, agent...) so that, for
/// example, run 3's swarm seed never collides with episode 3's environment.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

/// Exact position of a generator, for checkpoints.
///
/// The 32-byte key is stored as hex and the 128-bit word position as a decimal
/// string so that no JSON number exceeds 53 bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub key: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        let key = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            algorithm: RNG_ALGORITHM.to_string(),
            key,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<Rng> {
        if self.algorithm != RNG_ALGORITHM {
            return Err(Error::Parse {
                field: "rng.algorithm".into(),
                message: format!("unsupported generator {:?}", self.algorithm),
            });
        }
        let bad_key = || Error::Parse {
            field: "rng.key".into(),
            message: "expected 64 hex digits".into(),
        };
        if self.key.len() != 64 || !self.key.is_ascii() {
            return Err(bad_key());
        }
        let mut key = [0u8; 32];
        for (i, b) in key.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.key[2 * i..2 * i + 2], 16).map_err(|_| bad_key())?;
        }
        let word_pos: u128 = self.word_pos.parse().map_err(|_| Error::Parse {
            field: "rng.word_pos".into(),
            message: format!("not an unsigned integer: {:?}", self.word_pos),
        })?;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// Named seed streams.
pub mod streams {
    pub const ENV: u64 = 1;
    pub const SWARM: u64 = 2;
    pub const TRAIN_ENV: u64 = 3;
    pub const EVAL_ENV: u64 = 4;
    pub const AGENT: u64 = 5;
    pub const TRAIN_SWARM: u64 = 6;
    pub const EVAL_SWARM: u64 = 7;
}
