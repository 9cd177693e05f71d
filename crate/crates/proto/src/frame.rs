//! Length-prefixed framing: 4-byte big-endian length, then a UTF-8 JSON
//! document. Deliberately language-neutral and bit-exactly testable.

use std::io::{Read, Write};

use crate::message::ProtocolMessage;
use crate::{ProtoError, Result};

/// Frames above this are rejected before allocation.
pub const MAX_FRAME_BYTES: u32 = 16 * 1024 * 1024;

/// Serialize a message into one frame (length prefix + JSON payload).
pub fn encode_frame(msg: &ProtocolMessage) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(msg)?;
    let len = payload.len() as u32;
    if len > MAX_FRAME_BYTES {
        return Err(ProtoError::FrameTooLarge(len));
    }
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Parse one full frame produced by `encode_frame`.
pub fn decode_frame(frame: &[u8]) -> Result<ProtocolMessage> {
    if frame.len() < 4 {
        return Err(ProtoError::Closed);
    }
    let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
    if frame.len() != 4 + len {
        return Err(ProtoError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame length {} does not match prefix {len}", frame.len() - 4),
        )));
    }
    Ok(serde_json::from_slice(&frame[4..])?)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &ProtocolMessage) -> Result<()> {
    let frame = encode_frame(msg)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<ProtocolMessage> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(ProtoError::Closed)
        }
        Err(e)
            if e.kind() == std::io::ErrorKind::WouldBlock
                || e.kind() == std::io::ErrorKind::TimedOut =>
        {
            return Err(ProtoError::Timeout)
        }
        Err(e) => return Err(ProtoError::Io(e)),
    }
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_BYTES {
        return Err(ProtoError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ProtoError::Closed
        } else {
            ProtoError::Io(e)
        }
    })?;
    Ok(serde_json::from_slice(&payload)?)
}
