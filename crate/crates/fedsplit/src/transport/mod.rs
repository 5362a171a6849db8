//! Framed, typed, byte-counted channels between coordinator and clients.
//!
//! The wire layout is normative and bit-exact: a frame is a u32
//! little-endian payload length, one type byte, then the payload. Counters
//! charge the full frame (5-byte header plus payload) to both the sender's
//! tx and the receiver's rx, so an identical experiment produces identical
//! counters on loopback and TCP.

mod loopback;
mod recording;
mod tcp;
mod wire;

pub use loopback::{loopback_pair, loopback_pair_with_max, LoopbackEndpoint};
pub use recording::{FrameDirection, FrameEvent, FrameLog, RecordingChannel};
pub use tcp::{tcp_accept, tcp_connect, tcp_listen, TcpChannel};
pub use wire::{
    decode_tensor, decode_tensor_prefix, encode_tensor, encoded_tensor_len, labels_to_tensor,
    tensor_to_labels, CodecError,
};

use thiserror::Error;

/// Frame header bytes: u32 length + u8 type tag.
pub const FRAME_HEADER_LEN: u64 = 5;

/// Default payload cap (64 MiB).
pub const DEFAULT_MAX_PAYLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("channel closed")]
    Closed,
    #[error("payload of {size} bytes exceeds the {max} byte limit")]
    OversizePayload { size: usize, max: usize },
    #[error("unknown frame tag {0:#04x}")]
    UnknownTag(u8),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Frame type tags. Values are the on-wire byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    ModelDown = 2,
    ModelUp = 3,
    Activations = 4,
    Gradients = 5,
    ClientWeights = 6,
    TokenPass = 7,
    RoundDone = 8,
    Metrics = 9,
    Bye = 10,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Result<Self, TransportError> {
        Ok(match b {
            1 => FrameType::Hello,
            2 => FrameType::ModelDown,
            3 => FrameType::ModelUp,
            4 => FrameType::Activations,
            5 => FrameType::Gradients,
            6 => FrameType::ClientWeights,
            7 => FrameType::TokenPass,
            8 => FrameType::RoundDone,
            9 => FrameType::Metrics,
            10 => FrameType::Bye,
            other => return Err(TransportError::UnknownTag(other)),
        })
    }
}

/// Typed, length-prefixed wire message; the unit of communication accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(frame_type: FrameType, payload: Vec<u8>) -> Self {
        Frame {
            frame_type,
            payload,
        }
    }

    pub fn empty(frame_type: FrameType) -> Self {
        Frame::new(frame_type, Vec::new())
    }

    /// Full on-wire cost: header plus payload.
    pub fn wire_len(&self) -> u64 {
        FRAME_HEADER_LEN + self.payload.len() as u64
    }
}

/// Point-in-time tx/rx byte counts for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ByteSnapshot {
    pub tx: u64,
    pub rx: u64,
}

impl ByteSnapshot {
    pub fn delta_since(&self, earlier: ByteSnapshot) -> ByteSnapshot {
        ByteSnapshot {
            tx: self.tx - earlier.tx,
            rx: self.rx - earlier.rx,
        }
    }
}

/// A blocking, ordered, reliable frame channel with byte accounting.
/// Endpoints are single-owner; move them between threads, never share.
pub trait Channel: Send {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Frame, TransportError>;
    /// Monotonic counter snapshot.
    fn snapshot(&self) -> ByteSnapshot;
}

impl Channel for Box<dyn Channel> {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        (**self).send(frame)
    }

    fn recv(&mut self) -> Result<Frame, TransportError> {
        (**self).recv()
    }

    fn snapshot(&self) -> ByteSnapshot {
        (**self).snapshot()
    }
}
