//! Framed, reliable, ordered duplex message channel between the two
//! endpoint state machines, and the session protocol that runs over it.

pub mod framing;
pub mod link;
pub mod session;

pub use framing::{crc16, Deframer, Frame};
pub use link::{inproc_pair, replay_capture, ByteLink, CaptureLink, InProcLink, NoisyLink, TcpLink};
pub use session::{
    run_alice, run_bob, EndpointOutcome, LeakageLedger, MsgType, PaBlockRecord, SessionConfig,
    SessionError, SessionLink,
};
