//! The session protocol the two endpoints speak over the classical link:
//! basis announcement and reply, disclosure of the error-estimation subset,
//! LDPC syndromes, error-check tags and privacy-amplification parameters.
//!
//! Sequence numbers are strictly increasing per direction. Every message
//! body that leaks key-relevant information is tallied: syndromes and tags
//! count toward the security leakage subtracted by the key-rate formula;
//! basis and disclosure traffic is accounted separately because sifting
//! already consumes those bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bits::Bits;
use crate::decoy::{estimate_single_photon, DecoyEstimate, DecoyError, KeyRateParams, SourceParams};
use crate::postproc::ldpc::{decode_with_parity, LdpcCode, LdpcError};
use crate::postproc::toeplitz::{privacy_amplify, toeplitz_tag_u64, ToeplitzSeed};
use crate::postproc::{pa_output_length, PaBlockPolicy};
use crate::protocol::{Basis, DetectionEvent, FrameSource, StateClass};
use crate::seeds::{self, domain};
use crate::sifting::{chunk_blocks, per_pulse_gains, TallySet};

use super::framing::{Deframer, Frame};
use super::link::ByteLink;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("link i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("endpoints desynchronized: {0}")]
    Desync(String),
    #[error(transparent)]
    Ldpc(#[from] LdpcError),
    #[error(transparent)]
    Decoy(#[from] DecoyError),
}

/// Message types on the classical channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Start = 1,
    Stop = 2,
    BasisAnnounce = 3,
    DiscloseSelect = 4,
    Syndrome = 5,
    Tag = 6,
    PaParams = 7,
    StatsReport = 8,
}

impl MsgType {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::Start,
            2 => MsgType::Stop,
            3 => MsgType::BasisAnnounce,
            4 => MsgType::DiscloseSelect,
            5 => MsgType::Syndrome,
            6 => MsgType::Tag,
            7 => MsgType::PaParams,
            8 => MsgType::StatsReport,
            _ => return None,
        })
    }
}

/// Classical-channel bit accounting, by message category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LeakageLedger {
    pub syndrome_bits: u64,
    pub tag_bits: u64,
    pub basis_bits: u64,
    pub disclose_bits: u64,
}

impl LeakageLedger {
    /// Bits the key-rate formula must treat as eavesdropped side
    /// information: syndromes plus error-check tags.
    pub fn security_leakage_bits(&self) -> u64 {
        self.syndrome_bits + self.tag_bits
    }

    fn record(&mut self, t: MsgType, body_bits: u64) {
        match t {
            MsgType::Syndrome => self.syndrome_bits += body_bits,
            MsgType::Tag => self.tag_bits += body_bits,
            MsgType::BasisAnnounce => self.basis_bits += body_bits,
            MsgType::DiscloseSelect => self.disclose_bits += body_bits,
            _ => {}
        }
    }
}

/// Framed, sequence-checked message channel over a byte link.
pub struct SessionLink<L: ByteLink> {
    link: L,
    deframer: Deframer,
    tx_seq: u32,
    rx_seq: u32,
    pub ledger: LeakageLedger,
}

impl<L: ByteLink> SessionLink<L> {
    pub fn new(link: L) -> Self {
        Self { link, deframer: Deframer::new(), tx_seq: 0, rx_seq: 0, ledger: LeakageLedger::default() }
    }

    pub fn send(&mut self, t: MsgType, body: &[u8]) -> Result<(), SessionError> {
        let mut payload = Vec::with_capacity(4 + body.len());
        payload.extend_from_slice(&self.tx_seq.to_le_bytes());
        payload.extend_from_slice(body);
        self.tx_seq += 1;
        self.ledger.record(t, body.len() as u64 * 8);
        self.link.send_bytes(&Frame::new(t as u8, payload).encode())?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<(MsgType, Vec<u8>), SessionError> {
        let frame = loop {
            if let Some(f) = self.deframer.next_frame() {
                break f;
            }
            let mut buf = [0u8; 8192];
            let n = self.link.recv_bytes(&mut buf)?;
            if n == 0 {
                return Err(SessionError::Protocol("peer closed mid-session".into()));
            }
            self.deframer.push_bytes(&buf[..n]);
        };
        let t = MsgType::from_u8(frame.msg_type)
            .ok_or_else(|| SessionError::Protocol(format!("unknown msg type {}", frame.msg_type)))?;
        if frame.payload.len() < 4 {
            return Err(SessionError::Protocol("payload missing sequence number".into()));
        }
        let seq = u32::from_le_bytes(frame.payload[0..4].try_into().unwrap());
        if seq != self.rx_seq {
            return Err(SessionError::Protocol(format!(
                "sequence break: expected {}, got {seq}",
                self.rx_seq
            )));
        }
        self.rx_seq += 1;
        let body = frame.payload[4..].to_vec();
        self.ledger.record(t, body.len() as u64 * 8);
        Ok((t, body))
    }

    pub fn recv_expect(&mut self, expect: MsgType) -> Result<Vec<u8>, SessionError> {
        let (t, body) = self.recv()?;
        if t != expect {
            return Err(SessionError::Protocol(format!("expected {expect:?}, got {t:?}")));
        }
        Ok(body)
    }
}

/// Shared run parameters both endpoints are constructed with.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub n_slots: u64,
    pub u: f64,
    pub v: f64,
    pub disclosure: f64,
    pub rep_rate_hz: f64,
    /// Master seed; all per-purpose streams derive from it.
    pub master_seed: u64,
    pub pa_policy: PaBlockPolicy,
    pub ldpc_max_iter: u32,
    pub kp: KeyRateParams,
}

impl SessionConfig {
    fn source_params(&self) -> SourceParams {
        SourceParams {
            rep_rate_hz: self.rep_rate_hz,
            u: self.u,
            v: self.v,
            disclosure: self.disclosure,
            kappa: 1.0,
        }
    }

    fn tag_seed(&self, block_id: u32) -> ToeplitzSeed {
        ToeplitzSeed::new(seeds::mix(seeds::mix(self.master_seed, domain::TOEPLITZ_TAG), block_id as u64))
    }

    fn pa_seed(&self, block_id: u32) -> ToeplitzSeed {
        ToeplitzSeed::new(seeds::mix(seeds::mix(self.master_seed, domain::TOEPLITZ_PA), block_id as u64))
    }
}

/// One privacy-amplification block in the key manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct PaBlockRecord {
    pub block_id: u32,
    /// Corrected groups that entered the block.
    pub groups: u32,
    pub m_out: usize,
    pub tag: u8,
    pub tag_ok: bool,
    pub seed_fingerprint: String,
}

/// What one endpoint holds at the end of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointOutcome {
    pub final_key: Bits,
    pub tallies: TallySet,
    pub estimate: Option<DecoyEstimate>,
    pub ledger: LeakageLedger,
    pub groups_total: u32,
    pub groups_failed: u32,
    pub pa_blocks: Vec<PaBlockRecord>,
}

// ---- body encodings ---------------------------------------------------

const START_MAGIC: &[u8; 4] = b"UWQK";
const REPORT_TALLIES: u8 = 1;
const REPORT_SENT: u8 = 2;
const REPORT_GROUPS: u8 = 3;
const REPORT_TAG: u8 = 4;
const ANNOUNCE_CHUNK: usize = 6000;
const FLAG_KEEP: u8 = 0b001;

fn start_body(cfg: &SessionConfig) -> Vec<u8> {
    let mut b = START_MAGIC.to_vec();
    b.push(1); // protocol version
    b.extend_from_slice(&cfg.n_slots.to_le_bytes());
    b
}

fn read_u64(body: &[u8], off: &mut usize) -> Result<u64, SessionError> {
    let end = *off + 8;
    let v = body
        .get(*off..end)
        .ok_or_else(|| SessionError::Protocol("truncated body".into()))?;
    *off = end;
    Ok(u64::from_le_bytes(v.try_into().unwrap()))
}

fn read_u32(body: &[u8], off: &mut usize) -> Result<u32, SessionError> {
    let end = *off + 4;
    let v = body
        .get(*off..end)
        .ok_or_else(|| SessionError::Protocol("truncated body".into()))?;
    *off = end;
    Ok(u32::from_le_bytes(v.try_into().unwrap()))
}

fn read_u16(body: &[u8], off: &mut usize) -> Result<u16, SessionError> {
    let end = *off + 2;
    let v = body
        .get(*off..end)
        .ok_or_else(|| SessionError::Protocol("truncated body".into()))?;
    *off = end;
    Ok(u16::from_le_bytes(v.try_into().unwrap()))
}

fn class_code(cls: StateClass) -> u8 {
    match cls {
        StateClass::Signal => 0,
        StateClass::WeakDecoy => 1,
        StateClass::Vacuum => 2,
    }
}

fn class_from_code(code: u8) -> Result<StateClass, SessionError> {
    Ok(match code {
        0 => StateClass::Signal,
        1 => StateClass::WeakDecoy,
        2 => StateClass::Vacuum,
        _ => return Err(SessionError::Protocol("bad class code".into())),
    })
}

// ---- alice -------------------------------------------------------------

struct SiftedEntry {
    cls: StateClass,
    bit: bool,
}

/// Transmitter endpoint. Regenerates its frames from the derived seed,
/// answers the receiver's basis announcement, discloses the shared-seed
/// error-estimation subset, then drives reconciliation and privacy
/// amplification.
pub fn run_alice<L: ByteLink>(link: L, cfg: &SessionConfig) -> Result<EndpointOutcome, SessionError> {
    let mut s = SessionLink::new(link);
    cfg.source_params().validate()?;

    s.send(MsgType::Start, &start_body(cfg))?;
    let peer = s.recv_expect(MsgType::Start)?;
    if peer != start_body(cfg) {
        return Err(SessionError::Desync("start parameters differ".into()));
    }

    // receive the announced (slot, basis) list
    let announced = recv_announce(&mut s)?;

    // one pass over the frame stream: sent counts plus the matched record
    let mut tallies = TallySet::default();
    let mut reply_flags = vec![0u8; announced.len()];
    let mut sifted: Vec<SiftedEntry> = Vec::new();
    {
        let frames = FrameSource::new(seeds::mix(cfg.master_seed, domain::FRAMES), cfg.u, cfg.v);
        let mut idx = 0usize;
        for frame in frames.take(cfg.n_slots as usize) {
            match frame.cls {
                StateClass::Signal => tallies.signal.sent += 1,
                StateClass::WeakDecoy => tallies.decoy.sent += 1,
                StateClass::Vacuum => tallies.vacuum.sent += 1,
            }
            while idx < announced.len() && announced[idx].0 == frame.slot_index {
                let basis = announced[idx].1;
                let keep = basis == frame.pol.basis();
                let mut flags = class_code(frame.cls) << 1;
                if keep {
                    flags |= FLAG_KEEP;
                    sifted.push(SiftedEntry { cls: frame.cls, bit: frame.pol.bit() == 1 });
                }
                reply_flags[idx] = flags;
                idx += 1;
            }
        }
        if idx != announced.len() {
            return Err(SessionError::Protocol(format!(
                "announced slot {} beyond the frame stream",
                announced[idx].0
            )));
        }
    }
    send_reply_flags(&mut s, &reply_flags)?;

    // shared-seed disclosure selection, in sifted order
    let mut disclosure_rng = ChaCha8Rng::seed_from_u64(seeds::mix(cfg.master_seed, domain::DISCLOSURE));
    let mut disclosed_values = Bits::new();
    let mut key_bits = Bits::new();
    let mut my_counts = TallySet::default();
    for entry in &sifted {
        let t = match entry.cls {
            StateClass::Signal => &mut my_counts.signal,
            StateClass::WeakDecoy => &mut my_counts.decoy,
            StateClass::Vacuum => &mut my_counts.vacuum,
        };
        t.sifted += 1;
        if disclosure_rng.gen::<f64>() < cfg.disclosure {
            t.disclosed += 1;
            disclosed_values.push(entry.bit);
        } else if entry.cls == StateClass::Signal {
            key_bits.push(entry.bit);
        }
    }
    let mut body = (disclosed_values.len() as u32).to_le_bytes().to_vec();
    body.extend_from_slice(&disclosed_values.to_bytes());
    s.send(MsgType::DiscloseSelect, &body)?;

    // receiver reports per-class sifted/disclosed/errors
    let report = s.recv_expect(MsgType::StatsReport)?;
    read_tally_report(&report, &mut tallies)?;
    for cls in StateClass::ALL {
        let (mine, theirs) = (my_counts.class(cls), tallies.class(cls));
        if mine.sifted != theirs.sifted || mine.disclosed != theirs.disclosed {
            return Err(SessionError::Desync(format!(
                "sift counts differ for {cls:?}: {mine:?} vs {theirs:?}"
            )));
        }
    }
    tallies.elapsed_s = cfg.n_slots as f64 / cfg.rep_rate_hz;
    s.send(MsgType::StatsReport, &sent_report_body(&tallies))?;

    run_distillation(&mut s, cfg, tallies, key_bits, DistillRole::Alice)
}

// ---- bob ---------------------------------------------------------------

/// Receiver endpoint, driven by its detection events.
pub fn run_bob<L: ByteLink>(
    link: L,
    cfg: &SessionConfig,
    events: &[DetectionEvent],
) -> Result<EndpointOutcome, SessionError> {
    let mut s = SessionLink::new(link);
    cfg.source_params().validate()?;
    for w in events.windows(2) {
        if w[1].slot_index <= w[0].slot_index {
            return Err(SessionError::Protocol("events not slot-sorted".into()));
        }
    }

    let peer = s.recv_expect(MsgType::Start)?;
    if peer != start_body(cfg) {
        return Err(SessionError::Desync("start parameters differ".into()));
    }
    s.send(MsgType::Start, &start_body(cfg))?;

    let gated: Vec<&DetectionEvent> = events.iter().filter(|e| e.within_gate).collect();
    send_announce(&mut s, &gated)?;
    let flags = recv_reply_flags(&mut s, gated.len())?;

    // build the sifted list from the reply
    let mut tallies = TallySet::default();
    struct BobEntry {
        cls: StateClass,
        bit: bool,
    }
    let mut sifted: Vec<BobEntry> = Vec::new();
    for (event, &flag) in gated.iter().zip(&flags) {
        if flag & FLAG_KEEP != 0 {
            let cls = class_from_code(flag >> 1)?;
            sifted.push(BobEntry { cls, bit: event.detector.bit() == 1 });
        }
    }

    // same disclosure stream as the transmitter
    let mut disclosure_rng = ChaCha8Rng::seed_from_u64(seeds::mix(cfg.master_seed, domain::DISCLOSURE));
    let mut disclosed_indices = Vec::new();
    let mut key_bits = Bits::new();
    for (i, entry) in sifted.iter().enumerate() {
        let t = match entry.cls {
            StateClass::Signal => &mut tallies.signal,
            StateClass::WeakDecoy => &mut tallies.decoy,
            StateClass::Vacuum => &mut tallies.vacuum,
        };
        t.sifted += 1;
        if disclosure_rng.gen::<f64>() < cfg.disclosure {
            t.disclosed += 1;
            disclosed_indices.push(i);
        } else if entry.cls == StateClass::Signal {
            key_bits.push(entry.bit);
        }
    }

    let body = s.recv_expect(MsgType::DiscloseSelect)?;
    let mut off = 0usize;
    let count = read_u32(&body, &mut off)? as usize;
    if count != disclosed_indices.len() {
        return Err(SessionError::Desync(format!(
            "disclosure count differs: peer {count}, local {}",
            disclosed_indices.len()
        )));
    }
    let values = Bits::from_bytes(&body[off..], count);
    for (k, &i) in disclosed_indices.iter().enumerate() {
        let entry = &sifted[i];
        if values.get(k) != entry.bit {
            match entry.cls {
                StateClass::Signal => tallies.signal.errors += 1,
                StateClass::WeakDecoy => tallies.decoy.errors += 1,
                StateClass::Vacuum => tallies.vacuum.errors += 1,
            }
        }
    }
    s.send(MsgType::StatsReport, &tally_report_body(&tallies))?;

    let report = s.recv_expect(MsgType::StatsReport)?;
    read_sent_report(&report, &mut tallies)?;

    run_distillation(&mut s, cfg, tallies, key_bits, DistillRole::Bob)
}

// ---- shared distillation loop -------------------------------------------

enum DistillRole {
    Alice,
    Bob,
}

/// Error-correction, error-checking and privacy-amplification phase. The
/// two roles walk the same group/block schedule; only who encodes and who
/// decodes differs.
fn run_distillation<L: ByteLink>(
    s: &mut SessionLink<L>,
    cfg: &SessionConfig,
    tallies: TallySet,
    key_bits: Bits,
    role: DistillRole,
) -> Result<EndpointOutcome, SessionError> {
    let code = LdpcCode::reference();
    let policy = cfg.pa_policy;
    debug_assert_eq!(policy.group_bits, code.k());

    let gains = per_pulse_gains(&tallies, cfg.disclosure);
    let estimate = estimate_single_photon(
        gains.qu.clamp(0.0, 1.0),
        gains.qv.clamp(0.0, 1.0),
        gains.y0.clamp(0.0, 1.0),
        gains.eu,
        gains.ev,
        &cfg.source_params(),
    )
    .ok();
    // receiver-side channel parameter for the decoder LLRs
    let crossover = tallies
        .error_rate(StateClass::Signal)
        .unwrap_or(0.02)
        .clamp(1e-3, 0.3);

    let (blocks, _tail) = chunk_blocks(&key_bits, code.k());
    let groups_total = blocks.len() as u32;
    let mut groups_failed = 0u32;
    let mut final_key = Bits::new();
    let mut pa_blocks = Vec::new();

    let mut group_idx = 0usize;
    let mut block_id = 0u32;
    while group_idx < blocks.len() {
        let in_this_block = policy.groups_per_pa.min(blocks.len() - group_idx);
        let groups = &blocks[group_idx..group_idx + in_this_block];
        group_idx += in_this_block;

        // reconcile each group of the block
        let mut converged = vec![false; in_this_block];
        let mut corrected: Vec<Option<Bits>> = vec![None; in_this_block];
        for (g, group) in groups.iter().enumerate() {
            match role {
                DistillRole::Alice => {
                    let parity = code.encode_parity(&group.bits)?;
                    s.send(MsgType::Syndrome, &parity.to_bytes())?;
                    corrected[g] = Some(group.bits.clone());
                }
                DistillRole::Bob => {
                    let body = s.recv_expect(MsgType::Syndrome)?;
                    if body.len() * 8 != code.parity_bits() {
                        return Err(SessionError::Protocol("syndrome length mismatch".into()));
                    }
                    let parity = Bits::from_bytes(&body, code.parity_bits());
                    let out =
                        decode_with_parity(&group.bits, &parity, code, cfg.ldpc_max_iter, crossover);
                    converged[g] = out.converged;
                    corrected[g] = Some(out.corrected);
                }
            }
        }

        // agree on which groups survived
        match role {
            DistillRole::Alice => {
                let body = s.recv_expect(MsgType::StatsReport)?;
                read_group_results(&body, &mut converged)?;
            }
            DistillRole::Bob => {
                s.send(MsgType::StatsReport, &group_results_body(&converged))?;
            }
        }
        groups_failed += converged.iter().filter(|&&ok| !ok).count() as u32;

        let mut pa_input = Bits::new();
        for (g, ok) in converged.iter().enumerate() {
            if *ok {
                if let Some(bits) = &corrected[g] {
                    pa_input.extend_from(bits);
                }
            }
        }
        let surviving = converged.iter().filter(|&&ok| ok).count();
        if surviving == 0 {
            block_id += 1;
            continue;
        }

        // error check over the assembled block
        let tag_seed = cfg.tag_seed(block_id);
        let my_tag = toeplitz_tag_u64(&pa_input, &tag_seed, policy.tag_bits) as u8;
        let tag_ok;
        let wire_tag;
        match role {
            DistillRole::Alice => {
                s.send(MsgType::Tag, &[my_tag])?;
                let body = s.recv_expect(MsgType::StatsReport)?;
                tag_ok = read_tag_result(&body)?;
                wire_tag = my_tag;
            }
            DistillRole::Bob => {
                let body = s.recv_expect(MsgType::Tag)?;
                if body.len() != 1 {
                    return Err(SessionError::Protocol("tag length mismatch".into()));
                }
                wire_tag = body[0];
                tag_ok = wire_tag == my_tag;
                s.send(MsgType::StatsReport, &tag_result_body(tag_ok))?;
            }
        }

        // PA parameters: transmitter announces, receiver cross-checks
        let m_out_local = if tag_ok {
            match &estimate {
                Some(est) => {
                    pa_output_length(&gains, est, &cfg.kp, pa_input.len(), policy.tag_bits)
                }
                None => 0,
            }
        } else {
            0
        };
        let pa_seed = cfg.pa_seed(block_id);
        let m_out = match role {
            DistillRole::Alice => {
                let mut body = block_id.to_le_bytes().to_vec();
                body.extend_from_slice(&(m_out_local as u32).to_le_bytes());
                body.extend_from_slice(&pa_seed.seed.to_le_bytes());
                s.send(MsgType::PaParams, &body)?;
                m_out_local
            }
            DistillRole::Bob => {
                let body = s.recv_expect(MsgType::PaParams)?;
                let mut off = 0;
                let peer_block = read_u32(&body, &mut off)?;
                let peer_m_out = read_u32(&body, &mut off)? as usize;
                let peer_seed = read_u64(&body, &mut off)?;
                if peer_block != block_id || peer_seed != pa_seed.seed {
                    return Err(SessionError::Desync("PA parameters differ".into()));
                }
                if peer_m_out != m_out_local {
                    return Err(SessionError::Desync(format!(
                        "PA output length differs: peer {peer_m_out}, local {m_out_local}"
                    )));
                }
                m_out_local
            }
        };

        if tag_ok && m_out > 0 {
            let key = privacy_amplify(&pa_input, m_out, &pa_seed);
            final_key.extend_from(&key);
        }
        if !tag_ok {
            groups_failed += surviving as u32;
        }
        pa_blocks.push(PaBlockRecord {
            block_id,
            groups: surviving as u32,
            m_out,
            tag: wire_tag,
            tag_ok,
            seed_fingerprint: pa_seed.fingerprint(),
        });
        block_id += 1;
    }

    match role {
        DistillRole::Alice => {
            s.send(MsgType::Stop, &[])?;
            s.recv_expect(MsgType::Stop)?;
        }
        DistillRole::Bob => {
            s.recv_expect(MsgType::Stop)?;
            s.send(MsgType::Stop, &[])?;
        }
    }

    Ok(EndpointOutcome {
        final_key,
        tallies,
        estimate,
        ledger: s.ledger,
        groups_total,
        groups_failed,
        pa_blocks,
    })
}

// ---- chunked encodings ---------------------------------------------------

fn send_announce<L: ByteLink>(
    s: &mut SessionLink<L>,
    events: &[&DetectionEvent],
) -> Result<(), SessionError> {
    let total = events.len() as u32;
    let mut first = 0usize;
    loop {
        let count = ANNOUNCE_CHUNK.min(events.len() - first);
        let mut body = Vec::with_capacity(10 + count * 9);
        body.extend_from_slice(&total.to_le_bytes());
        body.extend_from_slice(&(first as u32).to_le_bytes());
        body.extend_from_slice(&(count as u16).to_le_bytes());
        for e in &events[first..first + count] {
            body.extend_from_slice(&e.slot_index.to_le_bytes());
            body.push((e.detector.basis() == Basis::Diagonal) as u8);
        }
        s.send(MsgType::BasisAnnounce, &body)?;
        first += count;
        if first >= events.len() {
            break;
        }
    }
    Ok(())
}

fn recv_announce<L: ByteLink>(s: &mut SessionLink<L>) -> Result<Vec<(u64, Basis)>, SessionError> {
    let mut out: Vec<(u64, Basis)> = Vec::new();
    loop {
        let body = s.recv_expect(MsgType::BasisAnnounce)?;
        let mut off = 0usize;
        let total = read_u32(&body, &mut off)? as usize;
        let first = read_u32(&body, &mut off)? as usize;
        let count = read_u16(&body, &mut off)? as usize;
        if first != out.len() {
            return Err(SessionError::Protocol("announce chunk out of order".into()));
        }
        for _ in 0..count {
            let slot = read_u64(&body, &mut off)?;
            let basis_byte = *body
                .get(off)
                .ok_or_else(|| SessionError::Protocol("truncated announce".into()))?;
            off += 1;
            let basis = if basis_byte == 1 { Basis::Diagonal } else { Basis::Rectilinear };
            if let Some(&(last, _)) = out.last() {
                if slot <= last {
                    return Err(SessionError::Protocol("announced slots not increasing".into()));
                }
            }
            out.push((slot, basis));
        }
        if out.len() >= total {
            return Ok(out);
        }
    }
}

fn send_reply_flags<L: ByteLink>(s: &mut SessionLink<L>, flags: &[u8]) -> Result<(), SessionError> {
    let total = flags.len() as u32;
    let mut first = 0usize;
    loop {
        let count = (ANNOUNCE_CHUNK * 8).min(flags.len() - first);
        let mut body = Vec::with_capacity(10 + count);
        body.extend_from_slice(&total.to_le_bytes());
        body.extend_from_slice(&(first as u32).to_le_bytes());
        body.extend_from_slice(&(count as u16).to_le_bytes());
        body.extend_from_slice(&flags[first..first + count]);
        s.send(MsgType::BasisAnnounce, &body)?;
        first += count;
        if first >= flags.len() {
            break;
        }
    }
    Ok(())
}

fn recv_reply_flags<L: ByteLink>(
    s: &mut SessionLink<L>,
    expected: usize,
) -> Result<Vec<u8>, SessionError> {
    let mut out = Vec::with_capacity(expected);
    loop {
        let body = s.recv_expect(MsgType::BasisAnnounce)?;
        let mut off = 0usize;
        let total = read_u32(&body, &mut off)? as usize;
        if total != expected {
            return Err(SessionError::Desync(format!(
                "reply covers {total} records, announced {expected}"
            )));
        }
        let first = read_u32(&body, &mut off)? as usize;
        let count = read_u16(&body, &mut off)? as usize;
        if first != out.len() || body.len() != off + count {
            return Err(SessionError::Protocol("reply chunk malformed".into()));
        }
        out.extend_from_slice(&body[off..]);
        if out.len() >= total {
            return Ok(out);
        }
    }
}

fn tally_report_body(t: &TallySet) -> Vec<u8> {
    let mut b = vec![REPORT_TALLIES];
    for cls in [&t.signal, &t.decoy, &t.vacuum] {
        b.extend_from_slice(&cls.sifted.to_le_bytes());
        b.extend_from_slice(&cls.disclosed.to_le_bytes());
        b.extend_from_slice(&cls.errors.to_le_bytes());
    }
    b
}

fn read_tally_report(body: &[u8], t: &mut TallySet) -> Result<(), SessionError> {
    if body.first() != Some(&REPORT_TALLIES) {
        return Err(SessionError::Protocol("expected tally report".into()));
    }
    let mut off = 1usize;
    for cls in [&mut t.signal, &mut t.decoy, &mut t.vacuum] {
        cls.sifted = read_u64(body, &mut off)?;
        cls.disclosed = read_u64(body, &mut off)?;
        cls.errors = read_u64(body, &mut off)?;
    }
    Ok(())
}

fn sent_report_body(t: &TallySet) -> Vec<u8> {
    let mut b = vec![REPORT_SENT];
    for cls in [&t.signal, &t.decoy, &t.vacuum] {
        b.extend_from_slice(&cls.sent.to_le_bytes());
    }
    b.extend_from_slice(&t.elapsed_s.to_le_bytes());
    b
}

fn read_sent_report(body: &[u8], t: &mut TallySet) -> Result<(), SessionError> {
    if body.first() != Some(&REPORT_SENT) {
        return Err(SessionError::Protocol("expected sent report".into()));
    }
    let mut off = 1usize;
    for cls in [&mut t.signal, &mut t.decoy, &mut t.vacuum] {
        cls.sent = read_u64(body, &mut off)?;
    }
    t.elapsed_s = f64::from_bits(read_u64(body, &mut off)?);
    Ok(())
}

fn group_results_body(converged: &[bool]) -> Vec<u8> {
    let mut b = vec![REPORT_GROUPS];
    b.extend_from_slice(&(converged.len() as u16).to_le_bytes());
    let mut byte = 0u8;
    for (i, &ok) in converged.iter().enumerate() {
        if ok {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            b.push(byte);
            byte = 0;
        }
    }
    if converged.len() % 8 != 0 {
        b.push(byte);
    }
    b
}

fn read_group_results(body: &[u8], converged: &mut [bool]) -> Result<(), SessionError> {
    if body.first() != Some(&REPORT_GROUPS) {
        return Err(SessionError::Protocol("expected group results".into()));
    }
    let mut off = 1usize;
    let count = read_u16(body, &mut off)? as usize;
    if count != converged.len() {
        return Err(SessionError::Desync("group count differs".into()));
    }
    for (i, slot) in converged.iter_mut().enumerate() {
        let byte = body
            .get(off + i / 8)
            .ok_or_else(|| SessionError::Protocol("truncated group results".into()))?;
        *slot = byte >> (i % 8) & 1 == 1;
    }
    Ok(())
}

fn tag_result_body(ok: bool) -> Vec<u8> {
    vec![REPORT_TAG, ok as u8]
}

fn read_tag_result(body: &[u8]) -> Result<bool, SessionError> {
    if body.first() != Some(&REPORT_TAG) || body.len() != 2 {
        return Err(SessionError::Protocol("expected tag result".into()));
    }
    Ok(body[1] == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::link::inproc_pair;

    #[test]
    fn fresh_ledger_is_zero() {
        let ledger = LeakageLedger::default();
        assert_eq!(ledger.security_leakage_bits(), 0);
        assert_eq!(ledger.basis_bits, 0);
    }

    #[test]
    fn message_layer_counts_leakage_on_both_ends() {
        let (la, lb) = inproc_pair();
        let mut a = SessionLink::new(la);
        let mut b = SessionLink::new(lb);

        let parity = vec![0u8; 288]; // one group's syndrome
        a.send(MsgType::Syndrome, &parity).unwrap();
        a.send(MsgType::Tag, &[0x5A]).unwrap();
        a.send(MsgType::StatsReport, &[REPORT_TAG, 1]).unwrap();

        assert_eq!(b.recv().unwrap().0, MsgType::Syndrome);
        assert_eq!(b.recv().unwrap().0, MsgType::Tag);
        assert_eq!(b.recv().unwrap().0, MsgType::StatsReport);

        for ledger in [&a.ledger, &b.ledger] {
            assert_eq!(ledger.syndrome_bits, 2304);
            assert_eq!(ledger.tag_bits, 8);
            assert_eq!(ledger.security_leakage_bits(), 2312);
        }
    }

    #[test]
    fn sequence_numbers_are_enforced() {
        let (la, lb) = inproc_pair();
        let mut a = SessionLink::new(la);
        let mut b = SessionLink::new(lb);
        a.send(MsgType::Start, b"x").unwrap();
        a.tx_seq += 1; // skip one
        a.send(MsgType::Stop, b"y").unwrap();
        assert_eq!(b.recv().unwrap().0, MsgType::Start);
        match b.recv() {
            Err(SessionError::Protocol(msg)) => assert!(msg.contains("sequence")),
            other => panic!("expected sequence break, got {other:?}"),
        }
    }

    #[test]
    fn unknown_message_type_rejected() {
        let (mut la, lb) = inproc_pair();
        let mut b = SessionLink::new(lb);
        let mut payload = 0u32.to_le_bytes().to_vec();
        payload.push(0);
        la.send_bytes(&Frame::new(99, payload).encode()).unwrap();
        assert!(matches!(b.recv(), Err(SessionError::Protocol(_))));
    }

    #[test]
    fn group_results_bitmap_roundtrip() {
        for n in [1usize, 7, 8, 9, 250] {
            let flags: Vec<bool> = (0..n).map(|i| i % 3 != 1).collect();
            let body = group_results_body(&flags);
            let mut back = vec![false; n];
            read_group_results(&body, &mut back).unwrap();
            assert_eq!(flags, back, "n={n}");
        }
    }
}
