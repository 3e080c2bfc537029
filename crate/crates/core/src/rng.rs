use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers mixed into derived seeds.
pub(crate) mod stream {
    pub const SPLIT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const INIT: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const PAIRS: u64 = 5;
    pub const OVERSAMPLE: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const CLASSIFIER: u64 = 8;
    pub const SEED_LABELS: u64 = 9;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically mixes a base seed with a path of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(base), |acc, t| splitmix(acc ^ splitmix(*t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
