//! Post-processing of sifted keys: LDPC error correction, Toeplitz error
//! checking and FFT-accelerated Toeplitz privacy amplification.

pub mod ldpc;
pub mod toeplitz;

use crate::decoy::{h2, DecoyEstimate, KeyRateParams};
use crate::sifting::PerPulseGains;

/// When privacy amplification fires and what it costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaBlockPolicy {
    /// Corrected LDPC groups accumulated per privacy amplification.
    pub groups_per_pa: usize,
    /// Message bits per group.
    pub group_bits: usize,
    /// Error-checking tag length revealed per PA block.
    pub tag_bits: usize,
}

impl Default for PaBlockPolicy {
    fn default() -> Self {
        // 256 groups of 6912 bits: ~1.7 Mbit per amplification
        Self { groups_per_pa: 256, group_bits: 6912, tag_bits: 8 }
    }
}

impl PaBlockPolicy {
    pub fn bits_per_pa(&self) -> usize {
        self.groups_per_pa * self.group_bits
    }
}

/// Secure output length for a reconciled block of `block_bits`:
/// floor(block · [Q1(1−H2(e1)) − Qu·R] / Qu) − tag_bits, clamped at zero.
/// The ratio is unit-free, so per-pulse gains serve directly.
///
/// An inconsistent decoy estimate yields zero (the block is unusable).
pub fn pa_output_length(
    gains: &PerPulseGains,
    est: &DecoyEstimate,
    kp: &KeyRateParams,
    block_bits: usize,
    tag_bits: usize,
) -> usize {
    if !est.consistent || gains.qu <= 0.0 {
        return 0;
    }
    let secure_fraction = (est.q1 * (1.0 - h2(est.e1)) - gains.qu * kp.leak_fraction_r) / gains.qu;
    if secure_fraction <= 0.0 {
        return 0;
    }
    let m = (block_bits as f64 * secure_fraction).floor() as usize;
    m.saturating_sub(tag_bits)
}
