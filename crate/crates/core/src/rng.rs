//! Seeded, platform-independent randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; mixes `(seed, stream)` into an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Serializable position of a ChaCha stream: seed, stream id, word position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &DetRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> DetRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.seed.to_vec();
        out.extend_from_slice(&self.stream.to_le_bytes());
        out.extend_from_slice(&self.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != 32 + 8 + 16 {
            return None;
        }
        Some(Self {
            seed: b[..32].try_into().ok()?,
            stream: u64::from_le_bytes(b[32..40].try_into().ok()?),
            word_pos: u128::from_le_bytes(b[40..56].try_into().ok()?),
        })
    }
}
