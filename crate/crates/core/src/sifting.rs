//! Basis reconciliation, the shared-seed disclosure subset for error
//! estimation, and the per-class count/error accumulators.
//!
//! The disclosed subset is selected by a PRNG both endpoints seed
//! identically, drawn once per sifted detection in slot order, so the two
//! sides never need to exchange index lists. Disclosed bits are consumed:
//! they feed the error tallies and never enter the key stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bits::Bits;
use crate::protocol::{DetectionEvent, PulseFrame, StateClass};

#[derive(Debug, Error, PartialEq)]
pub enum SiftError {
    #[error("events must be sorted by slot with no duplicates (violated at slot {0})")]
    UnsortedEvents(u64),
    #[error("event at slot {0} has no matching frame (mismatched streams)")]
    OrphanEvent(u64),
    #[error("disclosure fraction must be in [0,1), got {0}")]
    BadDisclosure(f64),
    #[error("vacuum rate undefined: no elapsed time accumulated")]
    NoElapsedTime,
}

/// Counts for one state class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassTally {
    /// Frames sent by the transmitter in this class.
    pub sent: u64,
    /// Basis-matched detections.
    pub sifted: u64,
    /// Detections diverted to error estimation.
    pub disclosed: u64,
    /// Errors found among the disclosed bits.
    pub errors: u64,
}

/// Per-class sifted counts and error counts, the Q/E quantities of the
/// experiment's summary table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TallySet {
    pub signal: ClassTally,
    pub decoy: ClassTally,
    pub vacuum: ClassTally,
    pub elapsed_s: f64,
}

impl TallySet {
    pub fn class(&self, cls: StateClass) -> &ClassTally {
        match cls {
            StateClass::Signal => &self.signal,
            StateClass::WeakDecoy => &self.decoy,
            StateClass::Vacuum => &self.vacuum,
        }
    }

    fn class_mut(&mut self, cls: StateClass) -> &mut ClassTally {
        match cls {
            StateClass::Signal => &mut self.signal,
            StateClass::WeakDecoy => &mut self.decoy,
            StateClass::Vacuum => &mut self.vacuum,
        }
    }

    /// Sifted rate in bps including the disclosed bits.
    pub fn rate_gross(&self, cls: StateClass) -> f64 {
        self.class(cls).sifted as f64 / self.elapsed_s
    }

    /// Sifted rate in bps after disclosure removal.
    pub fn rate_net(&self, cls: StateClass) -> f64 {
        let t = self.class(cls);
        (t.sifted - t.disclosed) as f64 / self.elapsed_s
    }

    /// Error rate estimated on the disclosed subset; None when nothing was
    /// disclosed for this class.
    pub fn error_rate(&self, cls: StateClass) -> Option<f64> {
        let t = self.class(cls);
        (t.disclosed > 0).then(|| t.errors as f64 / t.disclosed as f64)
    }

    /// One-row CSV in the shape of the reference results table: count
    /// rates (net of disclosure, bps) and error rates per class.
    pub fn to_csv_summary(&self) -> String {
        let fmt_e = |cls| {
            self.error_rate(cls)
                .map_or("nan".to_string(), |e| format!("{e:.6}"))
        };
        format!(
            "Qu_bps,Qv_bps,Q0_bps,Eu,Ev,E0\n{:.4},{:.4},{:.4},{},{},{}\n",
            self.rate_net(StateClass::Signal),
            self.rate_net(StateClass::WeakDecoy),
            self.rate_net(StateClass::Vacuum),
            fmt_e(StateClass::Signal),
            fmt_e(StateClass::WeakDecoy),
            fmt_e(StateClass::Vacuum),
        )
    }

    /// CSV snapshot, one row per class, both gross and net rates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "class,sent,sifted,disclosed,errors,rate_gross_bps,rate_net_bps,error_rate\n",
        );
        for (name, cls) in [
            ("signal", StateClass::Signal),
            ("decoy", StateClass::WeakDecoy),
            ("vacuum", StateClass::Vacuum),
        ] {
            let t = self.class(cls);
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{}\n",
                name,
                t.sent,
                t.sifted,
                t.disclosed,
                t.errors,
                self.rate_gross(cls),
                self.rate_net(cls),
                self.error_rate(cls).map_or("nan".into(), |e| format!("{e:.6}")),
            ));
        }
        out
    }
}

/// Result of sifting one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftOutcome {
    /// Transmitter-side non-disclosed signal bits, slot order.
    pub alice_bits: Bits,
    /// Receiver-side counterpart; differs from `alice_bits` exactly at the
    /// channel errors.
    pub bob_bits: Bits,
    pub tallies: TallySet,
}

/// Reconcile bases between the transmitted frames and the detection events,
/// divert the shared-seed disclosure subset to error estimation, and emit
/// the matching key streams.
///
/// `events` must be slot-sorted with at most one event per slot and only
/// in-gate clicks; out-of-gate events are discarded here defensively.
pub fn sift(
    frames: impl IntoIterator<Item = PulseFrame>,
    events: &[DetectionEvent],
    disclosure: f64,
    seed: u64,
    rep_rate_hz: f64,
) -> Result<SiftOutcome, SiftError> {
    if !(0.0..1.0).contains(&disclosure) {
        return Err(SiftError::BadDisclosure(disclosure));
    }
    for w in events.windows(2) {
        if w[1].slot_index <= w[0].slot_index {
            return Err(SiftError::UnsortedEvents(w[1].slot_index));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tallies = TallySet::default();
    let mut alice_bits = Bits::new();
    let mut bob_bits = Bits::new();

    let mut ev = events.iter().filter(|e| e.within_gate).peekable();
    let mut last_slot: Option<u64> = None;

    for frame in frames {
        last_slot = Some(frame.slot_index);
        tallies.class_mut(frame.cls).sent += 1;

        let hit = match ev.peek() {
            Some(e) if e.slot_index == frame.slot_index => {
                let e = **e;
                ev.next();
                e
            }
            _ => continue,
        };
        if hit.detector.basis() != frame.pol.basis() {
            continue;
        }

        let tally = tallies.class_mut(frame.cls);
        tally.sifted += 1;
        let disclose = rng.gen::<f64>() < disclosure;
        if disclose {
            tally.disclosed += 1;
            if hit.detector.bit() != frame.pol.bit() {
                tally.errors += 1;
            }
        } else if frame.cls == StateClass::Signal {
            alice_bits.push(frame.pol.bit() == 1);
            bob_bits.push(hit.detector.bit() == 1);
        }
    }

    if let Some(e) = ev.next() {
        return Err(SiftError::OrphanEvent(e.slot_index));
    }
    tallies.elapsed_s = last_slot.map_or(0.0, |s| (s + 1) as f64 / rep_rate_hz);

    Ok(SiftOutcome { alice_bits, bob_bits, tallies })
}

/// Vacuum-state count rate in bps (net of disclosure), the quantity used to
/// calibrate the background yield.
pub fn vacuum_monitor(tallies: &TallySet) -> Result<f64, SiftError> {
    if tallies.elapsed_s <= 0.0 {
        return Err(SiftError::NoElapsedTime);
    }
    Ok(tallies.rate_net(StateClass::Vacuum))
}

/// A numbered block of non-disclosed sifted key bits.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftedBlock {
    pub block_id: u32,
    pub bits: Bits,
}

/// Split a key stream into `k`-bit blocks; the tail that does not fill a
/// block is returned separately.
pub fn chunk_blocks(bits: &Bits, k: usize) -> (Vec<SiftedBlock>, Bits) {
    let n_full = bits.len() / k;
    let blocks = (0..n_full)
        .map(|i| SiftedBlock { block_id: i as u32, bits: bits.slice(i * k, k) })
        .collect();
    let tail = bits.slice(n_full * k, bits.len() - n_full * k);
    (blocks, tail)
}

/// Empirical per-pulse gains and error rates in the decoy-estimate
/// convention: each class's net sifted count divided by its own effective
/// pulse pool (class fraction × basis match × disclosure survival).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerPulseGains {
    pub qu: f64,
    pub qv: f64,
    pub y0: f64,
    pub eu: f64,
    pub ev: f64,
    /// False when some class had no disclosed bits to estimate errors from.
    pub complete: bool,
}

pub fn per_pulse_gains(tallies: &TallySet, disclosure: f64) -> PerPulseGains {
    let pool = |t: &ClassTally| t.sent as f64 * 0.5 * (1.0 - disclosure);
    let gain = |t: &ClassTally| {
        let p = pool(t);
        if p > 0.0 { (t.sifted - t.disclosed) as f64 / p } else { 0.0 }
    };
    let eu = tallies.error_rate(StateClass::Signal);
    let ev = tallies.error_rate(StateClass::WeakDecoy);
    PerPulseGains {
        qu: gain(&tallies.signal),
        qv: gain(&tallies.decoy),
        y0: gain(&tallies.vacuum),
        eu: eu.unwrap_or(0.0),
        ev: ev.unwrap_or(0.0),
        complete: eu.is_some() && ev.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, WaterType};
    use crate::photon::{simulate_run, DetectorModel};
    use crate::protocol::{frame_stream, Detector, Polarization, PulseFrame};

    const REP: f64 = 2e7;

    // Streams the frame source twice rather than materializing it; the
    // frames are cheap to regenerate and ten-million-frame vectors are not.
    fn run(
        n: usize,
        ch: &ChannelParams,
        frame_seed: u64,
        sim_seed: u64,
        sift_seed: u64,
    ) -> (Vec<DetectionEvent>, SiftOutcome) {
        let det = DetectorModel::from_channel(ch);
        let events =
            simulate_run(frame_stream(frame_seed, n, 0.8, 0.1), ch, &det, sim_seed).unwrap();
        let out =
            sift(frame_stream(frame_seed, n, 0.8, 0.1), &events, 0.2, sift_seed, REP).unwrap();
        (events, out)
    }

    #[test]
    fn noiseless_channel_gives_zero_error_and_identical_blocks() {
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, 0.0, 0.0).unwrap();
        let (_, out) = run(1_000_000, &ch, 1, 2, 3);
        assert_eq!(out.tallies.signal.errors, 0);
        assert_eq!(out.tallies.decoy.errors, 0);
        assert_eq!(out.alice_bits, out.bob_bits);
        assert!(!out.alice_bits.is_empty());
    }

    #[test]
    fn sifted_fraction_is_half_of_detections() {
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, 1e-5, 0.015).unwrap();
        let (events, out) = run(1_000_000, &ch, 4, 5, 6);
        let detections = events.len() as f64;
        let sifted =
            (out.tallies.signal.sifted + out.tallies.decoy.sifted + out.tallies.vacuum.sifted) as f64;
        let sigma = (detections * 0.25).sqrt();
        assert!((sifted - 0.5 * detections).abs() < 3.0 * sigma);
    }

    // Ten million frames at the 300 m clean-water operating point; the
    // signal error rate must sit within 3 sigma of the closed-form value
    // (0.5*y0 + e_det*x_u)/(y0 + x_u) ~ 2.17%, itself within a percent of
    // the published 2.15%.
    #[test]
    fn error_rate_at_300m_operating_point() {
        let y0 = 5.292348765671676e-6;
        let ch = ChannelParams::new(WaterType::jerlov_i(), 300.0, 9.59, y0, 0.015).unwrap();
        let (_, out) = run(10_000_000, &ch, 11, 12, 13);
        let eta = crate::channel::total_efficiency(&ch);
        let xu = 1.0 - (-eta * 0.8f64).exp();
        let model_eu = (0.5 * y0 + 0.015 * xu) / (y0 + xu);
        let disclosed = out.tallies.signal.disclosed as f64;
        assert!(disclosed > 50.0, "disclosed sample too small: {disclosed}");
        let eu = out.tallies.error_rate(crate::protocol::StateClass::Signal).unwrap();
        let sigma = (model_eu * (1.0 - model_eu) / disclosed).sqrt();
        assert!((eu - model_eu).abs() < 3.0 * sigma, "eu={eu} model={model_eu} sigma={sigma}");
        assert!((model_eu - 0.0215).abs() < 0.0015);
    }

    #[test]
    fn vacuum_monitor_reproduces_background_rate() {
        // Only the vacuum quarter of a 4e8-slot run is simulated (slots
        // 4i), which leaves the rate math identical at a quarter the cost.
        let y0 = 8.35e-6;
        let n_vac = 100_000_000u64;
        let frames = (0..n_vac).map(|i| PulseFrame {
            slot_index: 4 * i,
            pol: Polarization::H,
            cls: StateClass::Vacuum,
            mu: 0.0,
        });
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 500.0, y0, 0.0).unwrap();
        let det = DetectorModel::from_channel(&ch);
        let events = simulate_run(frames.clone(), &ch, &det, 21).unwrap();
        let out = sift(frames, &events, 0.2, 22, REP).unwrap();
        let q0 = vacuum_monitor(&out.tallies).unwrap();
        // elapsed = 4e8/2e7 = 20 s; expected rate y0 * 2e7 * 0.25 * 0.5 * 0.8 = 16.7
        assert!((out.tallies.elapsed_s - 20.0).abs() < 1e-6);
        assert!((q0 - 16.7).abs() / 16.7 < 0.10, "q0 = {q0}");
    }

    #[test]
    fn vacuum_rate_scales_linearly_with_y0() {
        let make = |y0: f64, seed: u64| {
            let frames = (0..20_000_000u64).map(|i| PulseFrame {
                slot_index: 4 * i,
                pol: Polarization::H,
                cls: StateClass::Vacuum,
                mu: 0.0,
            });
            let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 500.0, y0, 0.0).unwrap();
            let det = DetectorModel::from_channel(&ch);
            let events = simulate_run(frames.clone(), &ch, &det, seed).unwrap();
            sift(frames, &events, 0.2, seed + 1, REP).unwrap().tallies
        };
        let a = make(2e-5, 31);
        let b = make(4e-5, 33);
        let (na, nb) = (
            (a.vacuum.sifted - a.vacuum.disclosed) as f64,
            (b.vacuum.sifted - b.vacuum.disclosed) as f64,
        );
        // doubling y0 doubles the count, within 3 sigma of the difference
        let sigma = (nb + 4.0 * na).sqrt();
        assert!((nb - 2.0 * na).abs() < 3.0 * sigma, "na={na} nb={nb}");
    }

    #[test]
    fn vacuum_errors_concentrate_at_half() {
        let frames = (0..4_000_000u64).map(|i| PulseFrame {
            slot_index: i,
            pol: Polarization::H,
            cls: StateClass::Vacuum,
            mu: 0.0,
        });
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 500.0, 1e-3, 0.0).unwrap();
        let det = DetectorModel::from_channel(&ch);
        let events = simulate_run(frames.clone(), &ch, &det, 41).unwrap();
        let out = sift(frames, &events, 0.5, 42, REP).unwrap();
        let e0 = out.tallies.error_rate(StateClass::Vacuum).unwrap();
        let n = out.tallies.vacuum.disclosed as f64;
        assert!((e0 - 0.5).abs() < 3.0 * (0.25 / n).sqrt(), "e0={e0} n={n}");
    }

    #[test]
    fn disclosure_selection_is_deterministic() {
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, 1e-5, 0.015).unwrap();
        let (_, a) = run(500_000, &ch, 7, 8, 9);
        let (_, b) = run(500_000, &ch, 7, 8, 9);
        assert_eq!(a, b);
        assert_eq!(a.alice_bits.len(), a.bob_bits.len());
    }

    #[test]
    fn zero_disclosure_keeps_everything() {
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, 0.0, 0.0).unwrap();
        let frames: Vec<_> = frame_stream(1, 200_000, 0.8, 0.1).collect();
        let det = DetectorModel::from_channel(&ch);
        let events = simulate_run(frames.iter().copied(), &ch, &det, 2).unwrap();
        let out = sift(frames.iter().copied(), &events, 0.0, 3, REP).unwrap();
        assert_eq!(out.tallies.signal.disclosed, 0);
        assert_eq!(out.alice_bits.len() as u64, out.tallies.signal.sifted);
    }

    #[test]
    fn stream_validation() {
        let frames: Vec<_> = frame_stream(1, 100, 0.8, 0.1).collect();
        let dup = vec![
            DetectionEvent { slot_index: 5, detector: Detector::DH, within_gate: true },
            DetectionEvent { slot_index: 5, detector: Detector::DV, within_gate: true },
        ];
        assert!(matches!(
            sift(frames.iter().copied(), &dup, 0.2, 1, REP),
            Err(SiftError::UnsortedEvents(5))
        ));

        let orphan = vec![DetectionEvent { slot_index: 500, detector: Detector::DH, within_gate: true }];
        assert!(matches!(
            sift(frames.iter().copied(), &orphan, 0.2, 1, REP),
            Err(SiftError::OrphanEvent(500))
        ));

        assert!(sift(frames.iter().copied(), &[], 1.0, 1, REP).is_err());
    }

    #[test]
    fn empty_tallies_reject_rate_query() {
        let out = sift(std::iter::empty(), &[], 0.2, 1, REP).unwrap();
        assert!(vacuum_monitor(&out.tallies).is_err());
    }

    #[test]
    fn csv_exports_carry_the_expected_columns() {
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, 1e-5, 0.015).unwrap();
        let (_, out) = run(1_000_000, &ch, 61, 62, 63);
        let detailed = out.tallies.to_csv();
        assert!(detailed.starts_with("class,sent,sifted,disclosed,errors,"));
        assert_eq!(detailed.lines().count(), 4);

        let summary = out.tallies.to_csv_summary();
        let mut lines = summary.lines();
        assert_eq!(lines.next().unwrap(), "Qu_bps,Qv_bps,Q0_bps,Eu,Ev,E0");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 6);
        let qu: f64 = row[0].parse().unwrap();
        assert!((qu - out.tallies.rate_net(StateClass::Signal)).abs() < 1e-3);
    }

    #[test]
    fn chunking_numbers_blocks_and_keeps_tail() {
        let mut bits = Bits::new();
        for i in 0..25 {
            bits.push(i % 2 == 0);
        }
        let (blocks, tail) = chunk_blocks(&bits, 10);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].block_id, 0);
        assert_eq!(blocks[1].block_id, 1);
        assert_eq!(tail.len(), 5);
        assert!(blocks[0].bits.get(0));
        assert_eq!(tail.get(0), bits.get(20));
    }

    #[test]
    fn per_pulse_gains_are_consistent_with_model() {
        let y0 = 1e-5;
        let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, y0, 0.015).unwrap();
        let (_, out) = run(4_000_000, &ch, 51, 52, 53);
        let g = per_pulse_gains(&out.tallies, 0.2);
        assert!(g.complete);
        let eta = crate::channel::total_efficiency(&ch);
        let model_qu = y0 + 1.0 - (-eta * 0.8f64).exp();
        let pool = out.tallies.signal.sent as f64 * 0.5 * 0.8;
        let sigma = (model_qu / pool).sqrt();
        assert!((g.qu - model_qu).abs() < 4.0 * sigma, "qu={} model={}", g.qu, model_qu);
    }
}
