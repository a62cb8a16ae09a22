//! Byte-level framing of the classical channel: sync bytes, typed frames,
//! and CRC-16 validation with resynchronization by sync-byte scan.
//!
//! Wire format, little-endian:
//!   0xAA 0x55 | msg_type u8 | length u16 | payload | crc16 u16
//! with the CRC (CCITT, poly 0x1021, init 0xFFFF) computed over
//! msg_type..payload. Frames failing the CRC are dropped and counted; the
//! scanner then resumes inside the bad frame looking for the next sync
//! pair.

pub const SYNC: [u8; 2] = [0xAA, 0x55];
const HEADER_LEN: usize = 5; // sync(2) + type(1) + length(2)

/// CRC-16/CCITT-FALSE. Check value: crc16("123456789") = 0x29B1.
pub fn crc16(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

/// One classical-channel frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, payload: Vec<u8>) -> Self {
        assert!(payload.len() <= u16::MAX as usize, "payload exceeds length field");
        Self { msg_type, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + 2);
        out.extend_from_slice(&SYNC);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc16(&out[2..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

/// Incremental frame scanner over a byte stream.
#[derive(Debug, Default)]
pub struct Deframer {
    buf: Vec<u8>,
    /// Frames dropped on CRC failure.
    pub crc_drops: u64,
}

impl Deframer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next validated frame, if a complete one is buffered.
    pub fn next_frame(&mut self) -> Option<Frame> {
        loop {
            // scan to the next sync pair
            let start = self.find_sync()?;
            if start > 0 {
                self.buf.drain(..start);
            }
            if self.buf.len() < HEADER_LEN {
                return None;
            }
            let len = u16::from_le_bytes([self.buf[3], self.buf[4]]) as usize;
            let total = HEADER_LEN + len + 2;
            if self.buf.len() < total {
                return None;
            }
            let crc_stored = u16::from_le_bytes([self.buf[total - 2], self.buf[total - 1]]);
            if crc16(&self.buf[2..total - 2]) == crc_stored {
                let frame = Frame {
                    msg_type: self.buf[2],
                    payload: self.buf[HEADER_LEN..total - 2].to_vec(),
                };
                self.buf.drain(..total);
                return Some(frame);
            }
            // bad CRC: drop this sync pair and rescan inside the frame
            self.crc_drops += 1;
            self.buf.drain(..2);
        }
    }

    fn find_sync(&mut self) -> Option<usize> {
        if self.buf.is_empty() {
            return None;
        }
        for i in 0..self.buf.len().saturating_sub(1) {
            if self.buf[i] == SYNC[0] && self.buf[i + 1] == SYNC[1] {
                return Some(i);
            }
        }
        // keep a possible half-sync at the tail, discard the rest
        let keep_from = if *self.buf.last().unwrap() == SYNC[0] { self.buf.len() - 1 } else { self.buf.len() };
        self.buf.drain(..keep_from);
        None
    }
}
