//! Deterministic seed derivation. Every random stream in a run is a pure
//! function of the global seed and a stream tag, so reruns and arbitrary
//! worker interleavings reproduce bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random streams hanging off one global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Partition,
    EvalSplit,
    GateInit,
    Finetune,
    Baseline,
    /// Per-worker stream: derived as hash(global seed, k).
    Worker(usize),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Partition => 2,
            Stream::EvalSplit => 3,
            Stream::GateInit => 4,
            Stream::Finetune => 5,
            Stream::Baseline => 6,
            Stream::Worker(k) => 1000 + k as u64,
        }
    }
}

pub fn derive_seed(global: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(global) ^ splitmix64(stream.tag()))
}

pub fn rng_for(global: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, stream))
}
