use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based seeding keyed by (global seed, tensor, superblock, trial).
///
/// Every superblock gets its own ChaCha stream, so draws do not depend on the
/// order in which blocks are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    pub seed: u64,
    pub tensor: u64,
}

impl SeedSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed, tensor: 0 }
    }

    pub fn for_tensor(seed: u64, tensor_name: &str) -> Self {
        Self {
            seed,
            tensor: tensor_id(tensor_name),
        }
    }

    pub fn rng(&self, block: u64, trial: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.tensor.to_le_bytes());
        key[16..24].copy_from_slice(&trial.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(block);
        rng
    }
}

/// FNV-1a over the tensor name; stable across platforms and releases.
pub fn tensor_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
