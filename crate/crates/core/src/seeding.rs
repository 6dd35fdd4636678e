//! Every random draw derives from one user seed split into independent
//! ChaCha streams, so results do not depend on evaluation order or thread
//! count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Folds = 1,
    Scene = 2,
    Predict = 3,
    Baseline = 4,
}

/// Generator for item `index` of `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
