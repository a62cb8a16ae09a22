//! Seeded Monte Carlo detection engine: Poisson photon statistics through
//! the lossy channel, passive basis choice, detector background and
//! squashing, plus the time-domain machinery (gate filtering, sync-pulse
//! blanking and the delay-alignment scan).
//!
//! Two layers live here. `simulate_run` works at slot granularity and
//! assumes the delay alignment has already been applied, so every frame is
//! one usable gate. `align_delay` and `gate_filter` work on the nanosecond
//! timeline where gates, sync pulses and the programmable delay exist.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use thiserror::Error;

use crate::channel::{total_efficiency, ChannelParams};
use crate::protocol::{Basis, DetectionEvent, Detector, PulseFrame, StateClass};

#[derive(Debug, Error, PartialEq)]
pub enum PhotonError {
    #[error("slot {slot}: {cls:?} frame carries mu={mu}, inconsistent with earlier {expected}")]
    InconsistentIntensity { slot: u64, cls: &'static str, mu: f64, expected: f64 },
    #[error("vacuum frame at slot {0} carries nonzero mu")]
    VacuumNotEmpty(u64),
    #[error("delay scan found no statistically resolvable peak (max {max} vs mean {mean:.1} counts)")]
    NoSignal { max: u64, mean: f64 },
    #[error("invalid model: {0}")]
    BadModel(&'static str),
}

/// Receiver detector and gating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    /// Gate repetition period, ns (50 ns at the 20 MHz source rate).
    pub gate_period_ns: f64,
    /// Acceptance window, ns.
    pub gate_width_ns: f64,
    /// Detector dead time, ns; 0 disables the model.
    pub dead_time_ns: f64,
    /// Probability of a background or dark click inside one gate, summed
    /// over the four detectors.
    pub y0_per_gate: f64,
    /// Polarization misalignment error probability.
    pub e_det: f64,
}

impl DetectorModel {
    pub fn new(y0_per_gate: f64, e_det: f64) -> Self {
        Self {
            gate_period_ns: 50.0,
            gate_width_ns: 10.0,
            dead_time_ns: 0.0,
            y0_per_gate,
            e_det,
        }
    }

    /// Device noise figures copied from a channel record, so the Monte Carlo
    /// and the analytic predictor see the same parameters.
    pub fn from_channel(ch: &ChannelParams) -> Self {
        Self::new(ch.y0, ch.e_det)
    }

    fn validate(&self) -> Result<(), PhotonError> {
        if !(self.gate_width_ns < self.gate_period_ns) {
            return Err(PhotonError::BadModel("gate width must be below the gate period"));
        }
        if !(0.0..=1.0).contains(&self.y0_per_gate) || !(0.0..=1.0).contains(&self.e_det) {
            return Err(PhotonError::BadModel("probabilities must lie in [0,1]"));
        }
        Ok(())
    }
}

/// Synchronization-signal parameters and the programmable-delay geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncModel {
    /// Sync repetition period, ns (5 MHz).
    pub sync_period_ns: f64,
    /// Sync pulse width, ns.
    pub sync_pulse_width_ns: f64,
    /// Programmable delay resolution, ps.
    pub delay_step_ps: f64,
    /// Largest programmable delay, ns.
    pub max_delay_ns: f64,
    /// Ground-truth arrival phase of the quantum pulses, ns.
    pub true_offset_ns: f64,
    /// Click probability per frame at perfect alignment during the probe
    /// scan (the alignment runs on bright calibration statistics).
    pub probe_click_prob: f64,
}

impl SyncModel {
    pub fn new(true_offset_ns: f64) -> Self {
        Self {
            sync_period_ns: 200.0,
            sync_pulse_width_ns: 30.0,
            delay_step_ps: 250.0,
            max_delay_ns: 64.0,
            true_offset_ns,
            probe_click_prob: 0.5,
        }
    }

    fn validate(&self) -> Result<(), PhotonError> {
        if !(self.delay_step_ps > 0.0) {
            return Err(PhotonError::BadModel("delay step must be positive"));
        }
        if self.true_offset_ns < 0.0 {
            return Err(PhotonError::BadModel("true offset must be >= 0"));
        }
        Ok(())
    }
}

/// A raw detector click on the run timeline, before gating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawClick {
    pub t_ns: f64,
    pub detector: Detector,
}

/// Result counters of `gate_filter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateFilterStats {
    pub kept: usize,
    pub out_of_gate: usize,
    pub blanked: usize,
}

// Frames are simulated in fixed slot chunks, each chunk on an independently
// derived RNG stream, so a future parallel driver partitioned by slot range
// produces identical events.
const CHUNK_SLOTS: u64 = 1 << 16;

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::seeds::mix(seed, chunk))
}

/// Simulate detection of a frame stream through the channel.
///
/// Per frame: the photon number is Poisson(mu), each photon survives with
/// probability η = total_efficiency, the receiver basis is a passive 50/50
/// choice per photon, a matched-basis photon hits the wrong detector with
/// probability e_det, each of the four detectors fires on background with
/// probability y0/4, and multi-click patterns are squashed to a single
/// event with a random bit. Deterministic for a given seed, independent of
/// how a driver might chunk the slot range.
pub fn simulate_run(
    frames: impl IntoIterator<Item = PulseFrame>,
    ch: &ChannelParams,
    det: &DetectorModel,
    seed: u64,
) -> Result<Vec<DetectionEvent>, PhotonError> {
    det.validate()?;
    let eta = total_efficiency(ch);
    let y0q = det.y0_per_gate / 4.0;
    let dead_slots = if det.dead_time_ns > 0.0 {
        (det.dead_time_ns / det.gate_period_ns).ceil() as u64
    } else {
        0
    };

    // mu consistency tracking per class
    let mut mu_seen: [Option<f64>; 2] = [None, None]; // signal, decoy

    let mut events = Vec::new();
    let mut rng = chunk_rng(seed, 0);
    let mut current_chunk = 0u64;
    let mut last_click: [Option<u64>; 4] = [None; 4];

    for frame in frames {
        let chunk = frame.slot_index / CHUNK_SLOTS;
        if chunk != current_chunk {
            rng = chunk_rng(seed, chunk);
            current_chunk = chunk;
        }

        match frame.cls {
            StateClass::Vacuum => {
                if frame.mu != 0.0 {
                    return Err(PhotonError::VacuumNotEmpty(frame.slot_index));
                }
            }
            StateClass::Signal | StateClass::WeakDecoy => {
                let idx = (frame.cls == StateClass::WeakDecoy) as usize;
                match mu_seen[idx] {
                    None => {
                        if frame.mu <= 0.0 {
                            return Err(PhotonError::InconsistentIntensity {
                                slot: frame.slot_index,
                                cls: class_name(frame.cls),
                                mu: frame.mu,
                                expected: f64::NAN,
                            });
                        }
                        mu_seen[idx] = Some(frame.mu);
                        if let (Some(u), Some(v)) = (mu_seen[0], mu_seen[1]) {
                            if u <= v {
                                return Err(PhotonError::InconsistentIntensity {
                                    slot: frame.slot_index,
                                    cls: class_name(frame.cls),
                                    mu: frame.mu,
                                    expected: if idx == 0 { v } else { u },
                                });
                            }
                        }
                    }
                    Some(expected) if expected != frame.mu => {
                        return Err(PhotonError::InconsistentIntensity {
                            slot: frame.slot_index,
                            cls: class_name(frame.cls),
                            mu: frame.mu,
                            expected,
                        });
                    }
                    _ => {}
                }
            }
        }

        // set of clicked detectors this slot
        let mut clicked = [false; 4];

        if frame.mu > 0.0 {
            let n_photons = Poisson::new(frame.mu)
                .expect("mu > 0")
                .sample(&mut rng) as u64;
            for _ in 0..n_photons {
                if rng.gen::<f64>() >= eta {
                    continue;
                }
                let bob_basis = if rng.gen::<bool>() { Basis::Rectilinear } else { Basis::Diagonal };
                let bit = if bob_basis == frame.pol.basis() {
                    frame.pol.bit() ^ (rng.gen::<f64>() < det.e_det) as u8
                } else {
                    rng.gen::<bool>() as u8
                };
                clicked[Detector::from_basis_bit(bob_basis, bit) as usize] = true;
            }
        }

        for d in Detector::ALL {
            if y0q > 0.0 && rng.gen::<f64>() < y0q {
                clicked[d as usize] = true;
            }
        }

        if dead_slots > 0 {
            for d in Detector::ALL {
                if let Some(last) = last_click[d as usize] {
                    if frame.slot_index - last <= dead_slots {
                        clicked[d as usize] = false;
                    }
                }
            }
            // every detector that physically fired goes dead, not just the
            // one the squash reports
            for d in Detector::ALL {
                if clicked[d as usize] {
                    last_click[d as usize] = Some(frame.slot_index);
                }
            }
        }

        if let Some(detector) = squash(&clicked, &mut rng) {
            events.push(DetectionEvent {
                slot_index: frame.slot_index,
                detector,
                within_gate: true,
            });
        }
    }
    Ok(events)
}

fn class_name(cls: StateClass) -> &'static str {
    match cls {
        StateClass::Signal => "Signal",
        StateClass::WeakDecoy => "WeakDecoy",
        StateClass::Vacuum => "Vacuum",
    }
}

/// Reduce a click pattern to at most one detector. A double click within a
/// basis resolves to a uniformly random bit of that basis; when both bases
/// clicked, the basis itself is picked uniformly first.
fn squash<R: Rng>(clicked: &[bool; 4], rng: &mut R) -> Option<Detector> {
    let rect = (clicked[Detector::DH as usize], clicked[Detector::DV as usize]);
    let diag = (clicked[Detector::DP as usize], clicked[Detector::DM as usize]);
    let any_rect = rect.0 || rect.1;
    let any_diag = diag.0 || diag.1;
    let basis = match (any_rect, any_diag) {
        (false, false) => return None,
        (true, false) => Basis::Rectilinear,
        (false, true) => Basis::Diagonal,
        (true, true) => {
            if rng.gen::<bool>() {
                Basis::Rectilinear
            } else {
                Basis::Diagonal
            }
        }
    };
    let (a, b) = if basis == Basis::Rectilinear { rect } else { diag };
    let bit = match (a, b) {
        (true, false) => 0,
        (false, true) => 1,
        _ => rng.gen::<bool>() as u8, // double click in the basis
    };
    Some(Detector::from_basis_bit(basis, bit))
}

/// Fraction of quantum gates blanked because they overlap a sync pulse, for
/// a given programmed delay.
pub fn blanked_fraction(det: &DetectorModel, sync: &SyncModel, delay_ns: f64) -> f64 {
    let gates_per_sync = (sync.sync_period_ns / det.gate_period_ns).round();
    let n = gates_per_sync as usize;
    let mut blanked = 0usize;
    for j in 0..n {
        let start = (delay_ns + j as f64 * det.gate_period_ns).rem_euclid(sync.sync_period_ns);
        if gate_hits_sync(start, det.gate_width_ns, sync) {
            blanked += 1;
        }
    }
    blanked as f64 / n as f64
}

// Gate [start, start+width) against sync pulses at k·sync_period of the
// given width, on the circle of one sync period.
fn gate_hits_sync(start: f64, width: f64, sync: &SyncModel) -> bool {
    start < sync.sync_pulse_width_ns || start + width > sync.sync_period_ns
}

/// Scan all programmable delays, dwell `probe_frames` frames at each, and
/// return the delay with the highest in-gate count, reduced modulo the gate
/// period. The probe click profile is triangular around the true arrival
/// phase with the gate width as its base half-width, scaled down by the
/// blanked-gate fraction at that delay.
///
/// Fails when no delay setting is statistically distinguishable from the
/// mean (no signal present).
pub fn align_delay(
    det: &DetectorModel,
    sync: &SyncModel,
    probe_frames: u64,
    seed: u64,
) -> Result<f64, PhotonError> {
    det.validate()?;
    sync.validate()?;
    let step = sync.delay_step_ps / 1000.0;
    let n_steps = (sync.max_delay_ns / step).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: (u64, f64) = (0, 0.0);
    let mut total: u64 = 0;
    for i in 0..n_steps {
        let d = i as f64 * step;
        let p = probe_click_prob(det, sync, d);
        let n_eff = (probe_frames as f64 * (1.0 - blanked_fraction(det, sync, d))).round() as u64;
        let count = if p > 0.0 && n_eff > 0 {
            Binomial::new(n_eff, p.min(1.0)).expect("valid p").sample(&mut rng)
        } else {
            0
        };
        total += count;
        if count > best.0 {
            best = (count, d);
        }
    }

    let mean = total as f64 / n_steps as f64;
    if (best.0 as f64 - mean) <= 5.0 * (mean + 1.0).sqrt() {
        return Err(PhotonError::NoSignal { max: best.0, mean });
    }
    Ok(best.1.rem_euclid(det.gate_period_ns))
}

fn probe_click_prob(det: &DetectorModel, sync: &SyncModel, delay: f64) -> f64 {
    let period = det.gate_period_ns;
    let mut diff = (delay - sync.true_offset_ns).rem_euclid(period);
    if diff > period / 2.0 {
        diff -= period;
    }
    let tri = (1.0 - diff.abs() / det.gate_width_ns).max(0.0);
    sync.probe_click_prob * tri + det.y0_per_gate
}

/// Keep clicks that fall inside a 10 ns gate and outside any sync-pulse
/// blanking window. Gates sit at `delay + j·gate_period`; the slot index of
/// a kept click is `j`.
pub fn gate_filter(
    clicks: &[RawClick],
    det: &DetectorModel,
    sync: &SyncModel,
    delay_ns: f64,
) -> (Vec<DetectionEvent>, GateFilterStats) {
    let mut stats = GateFilterStats::default();
    let mut events = Vec::new();
    for click in clicks {
        let rel = click.t_ns - delay_ns;
        let slot = (rel / det.gate_period_ns).floor();
        let in_gate = slot >= 0.0 && rel - slot * det.gate_period_ns < det.gate_width_ns;
        if !in_gate {
            stats.out_of_gate += 1;
            continue;
        }
        let gate_start = (delay_ns + slot * det.gate_period_ns).rem_euclid(sync.sync_period_ns);
        if gate_hits_sync(gate_start, det.gate_width_ns, sync) {
            stats.blanked += 1;
            continue;
        }
        stats.kept += 1;
        events.push(DetectionEvent {
            slot_index: slot as u64,
            detector: click.detector,
            within_gate: true,
        });
    }
    (events, stats)
}
