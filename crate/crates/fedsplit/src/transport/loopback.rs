//! In-process channel pair: ordered, reliable, blocking, with the same byte
//! accounting as the TCP transport. This is the deterministic simulation
//! transport used by CI and the loopback experiment mode.

use std::sync::mpsc;

use super::{ByteSnapshot, Channel, Frame, TransportError, DEFAULT_MAX_PAYLOAD};

pub struct LoopbackEndpoint {
    tx: mpsc::Sender<Frame>,
    rx: mpsc::Receiver<Frame>,
    counters: ByteSnapshot,
    max_payload: usize,
}

/// Connected endpoint pair with the default payload cap.
pub fn loopback_pair() -> (LoopbackEndpoint, LoopbackEndpoint) {
    loopback_pair_with_max(DEFAULT_MAX_PAYLOAD)
}

pub fn loopback_pair_with_max(max_payload: usize) -> (LoopbackEndpoint, LoopbackEndpoint) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        LoopbackEndpoint {
            tx: a_tx,
            rx: a_rx,
            counters: ByteSnapshot::default(),
            max_payload,
        },
        LoopbackEndpoint {
            tx: b_tx,
            rx: b_rx,
            counters: ByteSnapshot::default(),
            max_payload,
        },
    )
}

impl Channel for LoopbackEndpoint {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if frame.payload.len() > self.max_payload {
            return Err(TransportError::OversizePayload {
                size: frame.payload.len(),
                max: self.max_payload,
            });
        }
        self.tx
            .send(frame.clone())
            .map_err(|_| TransportError::Closed)?;
        self.counters.tx += frame.wire_len();
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        self.counters.rx += frame.wire_len();
        Ok(frame)
    }

    fn snapshot(&self) -> ByteSnapshot {
        self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::FrameType;

    #[test]
    fn tx_of_one_side_equals_rx_of_the_other() {
        let (mut a, mut b) = loopback_pair();
        a.send(&Frame::new(FrameType::Hello, vec![1, 2, 3])).unwrap();
        a.send(&Frame::empty(FrameType::TokenPass)).unwrap();
        b.recv().unwrap();
        b.recv().unwrap();
        assert_eq!(a.snapshot().tx, 8 + 5);
        assert_eq!(a.snapshot().tx, b.snapshot().rx);
        assert_eq!(a.snapshot().rx, 0);
        assert_eq!(b.snapshot().tx, 0);
    }

    #[test]
    fn fifo_order_preserved_for_many_frames() {
        let (mut a, mut b) = loopback_pair();
        for i in 0..100u8 {
            a.send(&Frame::new(FrameType::Metrics, vec![i])).unwrap();
        }
        for i in 0..100u8 {
            assert_eq!(b.recv().unwrap().payload, vec![i]);
        }
    }

    #[test]
    fn recv_after_peer_drop_reports_closed() {
        let (a, mut b) = loopback_pair();
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn queued_frames_survive_peer_drop_then_closed() {
        let (mut a, mut b) = loopback_pair();
        a.send(&Frame::empty(FrameType::Bye)).unwrap();
        drop(a);
        assert_eq!(b.recv().unwrap().frame_type, FrameType::Bye);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn oversize_payload_rejected_without_counting() {
        let (mut a, _b) = loopback_pair_with_max(8);
        let err = a.send(&Frame::new(FrameType::Metrics, vec![0; 9])).unwrap_err();
        assert!(matches!(err, TransportError::OversizePayload { size: 9, max: 8 }));
        assert_eq!(a.snapshot().tx, 0);
    }

    #[test]
    fn snapshots_never_decrease() {
        let (mut a, mut b) = loopback_pair();
        let mut last = a.snapshot();
        for _ in 0..5 {
            a.send(&Frame::new(FrameType::Metrics, vec![0; 7])).unwrap();
            b.recv().unwrap();
            let now = a.snapshot();
            assert!(now.tx >= last.tx && now.rx >= last.rx);
            last = now;
        }
    }
}
