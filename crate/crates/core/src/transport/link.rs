//! Byte-stream links the session layer runs over: an in-process pair for
//! single-process runs, TCP for two-process runs, plus byte-error injection
//! and frame capture wrappers.
//!
//! The 488 nm OOK physical layer is abstracted to a reliable ordered byte
//! stream; the injected byte-error rate exists to exercise the CRC path,
//! not to model the modem.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::framing::{Deframer, Frame};

/// A reliable, ordered, duplex byte stream.
pub trait ByteLink: Send {
    fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// Blocking read; Ok(0) means the peer closed.
    fn recv_bytes(&mut self, buf: &mut [u8]) -> io::Result<usize>;
}

/// In-process duplex link built on channels.
pub struct InProcLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
}

/// Connected pair of in-process links.
pub fn inproc_pair() -> (InProcLink, InProcLink) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        InProcLink { tx: tx_a, rx: rx_a, pending: Vec::new(), pos: 0 },
        InProcLink { tx: tx_b, rx: rx_b, pending: Vec::new(), pos: 0 },
    )
}

impl ByteLink for InProcLink {
    fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.tx
            .send(bytes.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))
    }

    fn recv_bytes(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = (self.pending.len() - self.pos).min(buf.len());
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// TCP-backed link for two-process runs.
pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Self {
        Self { stream }
    }
}

impl ByteLink for TcpLink {
    fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)
    }

    fn recv_bytes(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.stream.read(buf)
    }
}

/// Wrapper that flips one random bit in each outgoing byte with the given
/// probability, to exercise CRC dropping downstream.
pub struct NoisyLink<L: ByteLink> {
    inner: L,
    byte_error_rate: f64,
    rng: ChaCha8Rng,
}

impl<L: ByteLink> NoisyLink<L> {
    pub fn new(inner: L, byte_error_rate: f64, seed: u64) -> Self {
        Self { inner, byte_error_rate, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl<L: ByteLink> ByteLink for NoisyLink<L> {
    fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        if self.byte_error_rate <= 0.0 {
            return self.inner.send_bytes(bytes);
        }
        let mut corrupted = bytes.to_vec();
        for b in corrupted.iter_mut() {
            if self.rng.gen::<f64>() < self.byte_error_rate {
                *b ^= 1 << self.rng.gen_range(0..8u8);
            }
        }
        self.inner.send_bytes(&corrupted)
    }

    fn recv_bytes(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.recv_bytes(buf)
    }
}

/// Wrapper that tees every received byte into a log file; the log replays
/// through a `Deframer` to recover the frame sequence.
pub struct CaptureLink<L: ByteLink> {
    inner: L,
    writer: BufWriter<File>,
}

impl<L: ByteLink> CaptureLink<L> {
    pub fn create(inner: L, path: &Path) -> io::Result<Self> {
        Ok(Self { inner, writer: BufWriter::new(File::create(path)?) })
    }
}

impl<L: ByteLink> ByteLink for CaptureLink<L> {
    fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.inner.send_bytes(bytes)
    }

    fn recv_bytes(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.recv_bytes(buf)?;
        self.writer.write_all(&buf[..n])?;
        Ok(n)
    }
}

/// Replay a capture file into its frame sequence.
pub fn replay_capture(path: &Path) -> io::Result<Vec<Frame>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut d = Deframer::new();
    d.push_bytes(&bytes);
    let mut frames = Vec::new();
    while let Some(f) = d.next_frame() {
        frames.push(f);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inproc_pair_carries_bytes_both_ways() {
        let (mut a, mut b) = inproc_pair();
        a.send_bytes(b"ping").unwrap();
        b.send_bytes(b"pong").unwrap();
        let mut buf = [0u8; 16];
        let n = b.recv_bytes(&mut buf).unwrap();
        assert_eq!(&buf[..n], b"ping");
        let n = a.recv_bytes(&mut buf).unwrap();
        assert_eq!(&buf[..n], b"pong");
    }

    #[test]
    fn inproc_close_yields_zero() {
        let (a, mut b) = inproc_pair();
        drop(a);
        let mut buf = [0u8; 4];
        assert_eq!(b.recv_bytes(&mut buf).unwrap(), 0);
    }

    #[test]
    fn capture_and_replay() {
        let dir = std::env::temp_dir().join("uwqkd_capture_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cap.bin");
        let (mut a, b) = inproc_pair();
        let mut capture = CaptureLink::create(b, &path).unwrap();
        let f1 = Frame::new(1, b"alpha".to_vec());
        let f2 = Frame::new(2, b"beta".to_vec());
        a.send_bytes(&f1.encode()).unwrap();
        a.send_bytes(&f2.encode()).unwrap();
        drop(a);
        let mut buf = [0u8; 64];
        while capture.recv_bytes(&mut buf).unwrap() > 0 {}
        drop(capture);
        assert_eq!(replay_capture(&path).unwrap(), vec![f1, f2]);
        std::fs::remove_dir_all(&dir).ok();
    }
}
