//! TCP transport with the same frame semantics and byte accounting as the
//! loopback pair. Counters charge framed application bytes, not TCP/IP
//! headers, so loopback and TCP runs of the same experiment agree
//! byte-for-byte.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use super::{ByteSnapshot, Channel, Frame, FrameType, TransportError, DEFAULT_MAX_PAYLOAD};

pub struct TcpChannel {
    stream: TcpStream,
    counters: ByteSnapshot,
    max_payload: usize,
}

impl TcpChannel {
    fn new(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel {
            stream,
            counters: ByteSnapshot::default(),
            max_payload: DEFAULT_MAX_PAYLOAD,
        })
    }
}

/// Binds a listener; accept clients with [`tcp_accept`].
pub fn tcp_listen(addr: impl ToSocketAddrs) -> Result<TcpListener, TransportError> {
    Ok(TcpListener::bind(addr)?)
}

pub fn tcp_accept(listener: &TcpListener) -> Result<TcpChannel, TransportError> {
    let (stream, _) = listener.accept()?;
    TcpChannel::new(stream)
}

pub fn tcp_connect(addr: impl ToSocketAddrs) -> Result<TcpChannel, TransportError> {
    TcpChannel::new(TcpStream::connect(addr)?)
}

impl Channel for TcpChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if frame.payload.len() > self.max_payload {
            return Err(TransportError::OversizePayload {
                size: frame.payload.len(),
                max: self.max_payload,
            });
        }
        let mut header = [0u8; 5];
        header[..4].copy_from_slice(&(frame.payload.len() as u32).to_le_bytes());
        header[4] = frame.frame_type as u8;
        self.stream.write_all(&header)?;
        self.stream.write_all(&frame.payload)?;
        self.stream.flush()?;
        self.counters.tx += frame.wire_len();
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, TransportError> {
        let mut header = [0u8; 5];
        if let Err(e) = self.stream.read_exact(&mut header) {
            return Err(match e.kind() {
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::ConnectionReset => {
                    TransportError::Closed
                }
                _ => TransportError::Io(e),
            });
        }
        let len = u32::from_le_bytes([header[0], header[1], header[2], header[3]]) as usize;
        if len > self.max_payload {
            return Err(TransportError::OversizePayload {
                size: len,
                max: self.max_payload,
            });
        }
        let frame_type = FrameType::from_byte(header[4])?;
        let mut payload = vec![0u8; len];
        self.stream.read_exact(&mut payload)?;
        let frame = Frame::new(frame_type, payload);
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
    use crate::transport::{loopback_pair, Channel};
    use std::thread;

    fn tcp_pair() -> (TcpChannel, TcpChannel) {
        let listener = tcp_listen("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let join = thread::spawn(move || tcp_connect(addr).unwrap());
        let server = tcp_accept(&listener).unwrap();
        (server, join.join().unwrap())
    }

    #[test]
    fn connect_to_closed_port_fails() {
        let listener = tcp_listen("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        assert!(tcp_connect(addr).is_err());
    }

    #[test]
    fn echo_roundtrip_matches_loopback_counters() {
        let exchange = |a: &mut dyn Channel, b: &mut dyn Channel| {
            a.send(&Frame::new(FrameType::ModelDown, vec![7; 100])).unwrap();
            let got = b.recv().unwrap();
            b.send(&got).unwrap();
            let back = a.recv().unwrap();
            assert_eq!(back.payload, vec![7; 100]);
        };

        let (mut la, mut lb) = loopback_pair();
        exchange(&mut la, &mut lb);

        let (mut ta, mut tb) = tcp_pair();
        exchange(&mut ta, &mut tb);

        assert_eq!(la.snapshot(), ta.snapshot());
        assert_eq!(lb.snapshot(), tb.snapshot());
        assert_eq!(ta.snapshot().tx, 105);
    }

    #[test]
    fn raw_unknown_tag_on_the_wire_is_rejected() {
        let listener = tcp_listen("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let join = thread::spawn(move || {
            let mut raw = TcpStream::connect(addr).unwrap();
            // length 0, tag 0xFF
            raw.write_all(&[0, 0, 0, 0, 0xFF]).unwrap();
            raw.flush().unwrap();
            // hold the socket open until the peer has read the header
            let mut buf = [0u8; 1];
            let _ = raw.read(&mut buf);
        });
        let mut server = tcp_accept(&listener).unwrap();
        let err = server.recv().unwrap_err();
        assert!(matches!(err, TransportError::UnknownTag(0xFF)), "{err:?}");
        drop(server);
        join.join().unwrap();
    }

    #[test]
    fn peer_shutdown_maps_to_closed() {
        let (server, mut client) = tcp_pair();
        drop(server);
        assert!(matches!(client.recv(), Err(TransportError::Closed)));
    }
}
