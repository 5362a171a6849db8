//! Channel wrapper that records every frame crossing it. Tests use this to
//! audit protocol properties (which frame types a client ever sends, and
//! that one session's traffic never interleaves with another's).

use std::sync::{Arc, Mutex};

use super::{ByteSnapshot, Channel, Frame, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    /// Sent by the wrapped endpoint.
    Sent,
    /// Received by the wrapped endpoint.
    Received,
}

#[derive(Debug, Clone)]
pub struct FrameEvent {
    pub peer: usize,
    pub direction: FrameDirection,
    pub frame: Frame,
}

/// Shared, thread-safe event log; clone handles freely.
#[derive(Debug, Clone, Default)]
pub struct FrameLog {
    events: Arc<Mutex<Vec<FrameEvent>>>,
}

impl FrameLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<FrameEvent> {
        self.events.lock().unwrap().clone()
    }

    fn push(&self, event: FrameEvent) {
        self.events.lock().unwrap().push(event);
    }
}

pub struct RecordingChannel<C> {
    inner: C,
    peer: usize,
    log: FrameLog,
}

impl<C: Channel> RecordingChannel<C> {
    pub fn new(inner: C, peer: usize, log: FrameLog) -> Self {
        RecordingChannel { inner, peer, log }
    }
}

impl<C: Channel> Channel for RecordingChannel<C> {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        self.inner.send(frame)?;
        self.log.push(FrameEvent {
            peer: self.peer,
            direction: FrameDirection::Sent,
            frame: frame.clone(),
        });
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, TransportError> {
        let frame = self.inner.recv()?;
        self.log.push(FrameEvent {
            peer: self.peer,
            direction: FrameDirection::Received,
            frame: frame.clone(),
        });
        Ok(frame)
    }

    fn snapshot(&self) -> ByteSnapshot {
        self.inner.snapshot()
    }
}
