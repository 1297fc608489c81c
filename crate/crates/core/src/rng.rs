use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, portable random stream for one purpose under one seed.
pub(crate) fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub(crate) const SPLIT: u64 = 1;
pub(crate) const SYNTH_SAMPLING: u64 = 2;
pub(crate) const SYNTH_RENDER: u64 = 3;
pub(crate) const SYNTH_NOISE: u64 = 4;
pub(crate) const INIT: u64 = 5;
pub(crate) const SHUFFLE: u64 = 6;
