//! Bidirectional message transports: in-process channel pairs for
//! deterministic tests, framed TCP for the networked deployment.

use std::io::BufReader;
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::frame::{read_frame, write_frame};
use crate::message::ProtocolMessage;
use crate::{ProtoError, Result};

pub trait Transport: Send {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<ProtocolMessage>;
}

/// One endpoint of an in-process duplex channel.
pub struct InProcTransport {
    tx: Sender<ProtocolMessage>,
    rx: Receiver<ProtocolMessage>,
}

/// Connected pair of in-process endpoints.
pub fn inproc_pair() -> (InProcTransport, InProcTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        InProcTransport { tx: tx_a, rx: rx_a },
        InProcTransport { tx: tx_b, rx: rx_b },
    )
}

impl Transport for InProcTransport {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()> {
        self.tx.send(msg.clone()).map_err(|_| ProtoError::Closed)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<ProtocolMessage> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(ProtoError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ProtoError::Closed),
        }
    }
}

/// Framed messages over a TCP stream. Reads run through a buffered reader;
/// writes go straight to the socket with flush-per-frame.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
        })
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()> {
        write_frame(&mut self.writer, msg)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<ProtocolMessage> {
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        read_frame(&mut self.reader)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::MessageBody;

    #[test]
    fn inproc_pair_is_full_duplex() {
        let (mut a, mut b) = inproc_pair();
        let m1 = ProtocolMessage::new("s", 0, 1, MessageBody::Ready);
        let m2 = ProtocolMessage::new("s", 0, 2, MessageBody::Terminate);
        a.send(&m1).unwrap();
        b.send(&m2).unwrap();
        assert_eq!(b.recv_timeout(Duration::from_secs(1)).unwrap(), m1);
        assert_eq!(a.recv_timeout(Duration::from_secs(1)).unwrap(), m2);
    }

    #[test]
    fn inproc_timeout_and_disconnect() {
        let (mut a, b) = inproc_pair();
        assert!(matches!(
            a.recv_timeout(Duration::from_millis(10)),
            Err(ProtoError::Timeout)
        ));
        drop(b);
        assert!(matches!(
            a.recv_timeout(Duration::from_millis(10)),
            Err(ProtoError::Closed)
        ));
    }
}
