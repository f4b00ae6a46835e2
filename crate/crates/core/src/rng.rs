//! Counter-based random streams.
//!
//! Every stream is addressed by `(seed, replica, excursion)`: the seed and
//! replica id form the ChaCha key, the excursion index selects the ChaCha
//! stream. Any replica or excursion can therefore be regenerated on its own,
//! and results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const DOMAIN_TAG: u64 = 0x7265_666c_5f73_7462; // "refl_stb"

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub excursion: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64, excursion: u64) -> Self {
        StreamKey {
            seed,
            replica,
            excursion,
        }
    }

    pub fn rng(&self) -> StreamRng {
        stream(self.seed, self.replica, self.excursion)
    }
}

pub fn stream(seed: u64, replica: u64, excursion: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replica.to_le_bytes());
    key[16..24].copy_from_slice(&DOMAIN_TAG.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(excursion);
    rng
}
