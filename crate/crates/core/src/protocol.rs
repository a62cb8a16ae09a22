//! BB84 alphabet, the random-bit-to-laser control mapping, and the frame and
//! detection records shared by the rest of the stack.
//!
//! Two endpoints must agree on the bit convention. The one fixed here:
//! H and P encode bit 0, V and M encode bit 1.

use std::io::{self, Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One of the four signal polarizations. P is 45°, M is 135°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    H,
    V,
    P,
    M,
}

/// Measurement/preparation basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Polarization {
    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Rectilinear,
            Polarization::P | Polarization::M => Basis::Diagonal,
        }
    }

    /// Classical bit carried by this polarization: H=0, V=1, P=0, M=1.
    pub fn bit(self) -> u8 {
        match self {
            Polarization::H | Polarization::P => 0,
            Polarization::V | Polarization::M => 1,
        }
    }

    pub fn from_basis_bit(basis: Basis, bit: u8) -> Self {
        match (basis, bit & 1) {
            (Basis::Rectilinear, 0) => Polarization::H,
            (Basis::Rectilinear, _) => Polarization::V,
            (Basis::Diagonal, 0) => Polarization::P,
            (Basis::Diagonal, _) => Polarization::M,
        }
    }

    fn to_u8(self) -> u8 {
        match self {
            Polarization::H => 0,
            Polarization::V => 1,
            Polarization::P => 2,
            Polarization::M => 3,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Polarization::H),
            1 => Some(Polarization::V),
            2 => Some(Polarization::P),
            3 => Some(Polarization::M),
            _ => None,
        }
    }
}

/// Intensity class of a pulse: signal (mean photon number u), weak decoy (v)
/// or vacuum (0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateClass {
    Signal,
    WeakDecoy,
    Vacuum,
}

impl StateClass {
    pub fn mean_photons(self, u: f64, v: f64) -> f64 {
        match self {
            StateClass::Signal => u,
            StateClass::WeakDecoy => v,
            StateClass::Vacuum => 0.0,
        }
    }

    fn to_u8(self) -> u8 {
        match self {
            StateClass::Signal => 0,
            StateClass::WeakDecoy => 1,
            StateClass::Vacuum => 2,
        }
    }

    fn from_u8(x: u8) -> Option<Self> {
        match x {
            0 => Some(StateClass::Signal),
            1 => Some(StateClass::WeakDecoy),
            2 => Some(StateClass::Vacuum),
            _ => None,
        }
    }

    pub const ALL: [StateClass; 3] = [StateClass::Signal, StateClass::WeakDecoy, StateClass::Vacuum];
}

/// One 50 ns source slot of the 20 MHz transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseFrame {
    /// Pulse ordinal at the source repetition rate.
    pub slot_index: u64,
    pub pol: Polarization,
    pub cls: StateClass,
    /// Mean photons per pulse; determined solely by `cls`.
    pub mu: f64,
}

/// The four single-photon detectors at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    DH,
    DV,
    DP,
    DM,
}

impl Detector {
    pub fn basis(self) -> Basis {
        match self {
            Detector::DH | Detector::DV => Basis::Rectilinear,
            Detector::DP | Detector::DM => Basis::Diagonal,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Detector::DH | Detector::DP => 0,
            Detector::DV | Detector::DM => 1,
        }
    }

    pub fn from_basis_bit(basis: Basis, bit: u8) -> Self {
        match (basis, bit & 1) {
            (Basis::Rectilinear, 0) => Detector::DH,
            (Basis::Rectilinear, _) => Detector::DV,
            (Basis::Diagonal, 0) => Detector::DP,
            (Basis::Diagonal, _) => Detector::DM,
        }
    }

    fn to_u8(self) -> u8 {
        match self {
            Detector::DH => 0,
            Detector::DV => 1,
            Detector::DP => 2,
            Detector::DM => 3,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Detector::DH),
            1 => Some(Detector::DV),
            2 => Some(Detector::DP),
            3 => Some(Detector::DM),
            _ => None,
        }
    }

    pub const ALL: [Detector; 4] = [Detector::DH, Detector::DV, Detector::DP, Detector::DM];
}

/// A single registered click, at most one per slot after squashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub slot_index: u64,
    pub detector: Detector,
    /// Clicks outside the time gate are discarded before sifting.
    pub within_gate: bool,
}

/// Decode the four random control bits into a pulse, following the laser
/// control format: (bit3,bit2) selects the polarization 00→H, 01→V, 10→P,
/// 11→M and (bit1,bit0) the class 00→vacuum, 01→weak decoy, 10/11→signal.
///
/// Signal therefore occurs twice as often as either other class under
/// uniform bits, giving the 2:1:1 state ratio.
pub fn encode_random_bits(bit3: u8, bit2: u8, bit1: u8, bit0: u8) -> (Polarization, StateClass) {
    let pol = match (bit3 & 1, bit2 & 1) {
        (0, 0) => Polarization::H,
        (0, 1) => Polarization::V,
        (1, 0) => Polarization::P,
        (1, 1) => Polarization::M,
        _ => unreachable!(),
    };
    let cls = match (bit1 & 1, bit0 & 1) {
        (0, 0) => StateClass::Vacuum,
        (0, 1) => StateClass::WeakDecoy,
        _ => StateClass::Signal,
    };
    (pol, cls)
}

/// Deterministic stream of pulse frames driven by a seeded PRNG standing in
/// for the hardware RNG chips. The same seed reproduces the same stream.
pub struct FrameSource {
    rng: ChaCha8Rng,
    next_slot: u64,
    u: f64,
    v: f64,
    /// Buffered random nibbles; one RNG word feeds eight frames.
    buf: u32,
    buf_left: u32,
}

impl FrameSource {
    pub fn new(seed: u64, u: f64, v: f64) -> Self {
        assert!(u > v && v > 0.0, "intensities must satisfy u > v > 0");
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_slot: 0,
            u,
            v,
            buf: 0,
            buf_left: 0,
        }
    }
}

impl Iterator for FrameSource {
    type Item = PulseFrame;

    fn next(&mut self) -> Option<PulseFrame> {
        if self.buf_left == 0 {
            self.buf = self.rng.next_u32();
            self.buf_left = 8;
        }
        let nibble = (self.buf & 0xF) as u8;
        self.buf >>= 4;
        self.buf_left -= 1;

        let (pol, cls) = encode_random_bits(nibble >> 3, (nibble >> 2) & 1, (nibble >> 1) & 1, nibble & 1);
        let frame = PulseFrame {
            slot_index: self.next_slot,
            pol,
            cls,
            mu: cls.mean_photons(self.u, self.v),
        };
        self.next_slot += 1;
        Some(frame)
    }
}

/// First `n` frames of the seeded stream.
pub fn frame_stream(seed: u64, n: usize, u: f64, v: f64) -> impl Iterator<Item = PulseFrame> {
    FrameSource::new(seed, u, v).take(n)
}

// --- binary fixture formats -------------------------------------------------
//
// Frames: u64 slot_index, u8 pol, u8 cls, little-endian.
// Events: u64 slot_index, u8 detector, u8 flags (bit0 = within_gate).

pub fn write_frames<W: Write>(w: &mut W, frames: impl IntoIterator<Item = PulseFrame>) -> io::Result<()> {
    for f in frames {
        w.write_all(&f.slot_index.to_le_bytes())?;
        w.write_all(&[f.pol.to_u8(), f.cls.to_u8()])?;
    }
    Ok(())
}

/// Read a frame fixture back; intensities are supplied by the caller since
/// the record stores only the class.
pub fn read_frames<R: Read>(r: &mut R, u: f64, v: f64) -> io::Result<Vec<PulseFrame>> {
    let mut out = Vec::new();
    let mut rec = [0u8; 10];
    loop {
        if !read_exact_or_eof(r, &mut rec)? {
            break;
        }
        let slot = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let pol = Polarization::from_u8(rec[8])
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad polarization byte"))?;
        let cls = StateClass::from_u8(rec[9])
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad class byte"))?;
        out.push(PulseFrame {
            slot_index: slot,
            pol,
            cls,
            mu: cls.mean_photons(u, v),
        });
    }
    Ok(out)
}

pub fn write_events<W: Write>(w: &mut W, events: &[DetectionEvent]) -> io::Result<()> {
    for e in events {
        w.write_all(&e.slot_index.to_le_bytes())?;
        w.write_all(&[e.detector.to_u8(), e.within_gate as u8])?;
    }
    Ok(())
}

pub fn read_events<R: Read>(r: &mut R) -> io::Result<Vec<DetectionEvent>> {
    let mut out = Vec::new();
    let mut rec = [0u8; 10];
    while read_exact_or_eof(r, &mut rec)? {
        let slot = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let detector = Detector::from_u8(rec[8])
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad detector byte"))?;
        out.push(DetectionEvent {
            slot_index: slot,
            detector,
            within_gate: rec[9] & 1 == 1,
        });
    }
    Ok(out)
}

/// Returns Ok(false) on clean EOF at a record boundary.
fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "truncated record",
            ));
        }
        filled += n;
    }
    Ok(true)
}
