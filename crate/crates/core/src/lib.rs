//! Physics-faithful simulator and complete key-distillation stack for an
//! underwater decoy-state BB84 link.
//!
//! The crate is organized along the signal path: [`protocol`] defines the
//! alphabet and frame/event records, [`channel`] the seawater link budget,
//! [`photon`] the Monte Carlo detection engine, [`sifting`] basis
//! reconciliation and the count/error tallies, [`decoy`] the three-intensity
//! bounds and the analytic key-rate predictor, [`postproc`] LDPC
//! reconciliation plus Toeplitz error checking and privacy amplification,
//! [`tomography`] polarization-state reconstruction, and [`transport`] the
//! framed classical channel with the two endpoint session state machines.

pub mod bits;
pub mod channel;
pub mod decoy;
pub mod photon;
pub mod postproc;
pub mod protocol;
pub mod runner;
pub mod seeds;
pub mod sifting;
pub mod tomography;
pub mod transport;

pub use bits::Bits;
pub use channel::{attenuation_db, receiver_budget, total_efficiency, ChannelParams, WaterType};
pub use decoy::{
    estimate_single_photon, h2, keyrate_curve, max_tolerable_attenuation, predict_performance,
    secure_key_rate, DecoyEstimate, EcMode, KeyRateParams, PerformancePoint, SourceParams,
};
pub use photon::{align_delay, gate_filter, simulate_run, DetectorModel, SyncModel};
pub use protocol::{
    encode_random_bits, frame_stream, Basis, DetectionEvent, Detector, Polarization, PulseFrame,
    StateClass,
};
pub use sifting::{chunk_blocks, sift, vacuum_monitor, SiftOutcome, SiftedBlock, TallySet};
pub use tomography::{fidelity, reconstruct, DensityMatrix, TomographyCounts};
