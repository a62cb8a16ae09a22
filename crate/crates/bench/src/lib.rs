//! Shared input builders for the benchmark suite; see `benches/pipeline.rs`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uwqkd_core::bits::Bits;

/// Deterministic random bit block for hashing/coding benchmarks.
pub fn random_block(len: usize, seed: u64) -> Bits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Bits::random(len, &mut rng)
}

/// A block with a given bit-flip pattern applied, as the noisy receiver
/// copy for reconciliation benchmarks.
pub fn flipped_copy(block: &Bits, crossover: f64, seed: u64) -> Bits {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = block.clone();
    for i in 0..out.len() {
        if rng.gen::<f64>() < crossover {
            out.set(i, !out.get(i));
        }
    }
    out
}
