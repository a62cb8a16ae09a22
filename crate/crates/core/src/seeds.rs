//! Deterministic sub-seed derivation. Every random stream in a run is keyed
//! by the master seed and a fixed domain tag, so any component can be rerun
//! in isolation and two processes sharing the master seed derive identical
//! streams.

/// splitmix64 finalizer over the master seed and a domain tag.
pub fn mix(master: u64, domain: u64) -> u64 {
    let mut z = master ^ domain.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Domain tags for the named streams of a run.
pub mod domain {
    pub const FRAMES: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const DISCLOSURE: u64 = 3;
    pub const TOEPLITZ_TAG: u64 = 4;
    pub const TOEPLITZ_PA: u64 = 5;
    pub const LINK_NOISE: u64 = 6;
}
