pub mod frame;
pub mod message;
pub mod transport;

pub use frame::{decode_frame, encode_frame, read_frame, write_frame};
pub use message::{MessageBody, ProtocolMessage, PROTOCOL_VERSION};
pub use transport::{inproc_pair, InProcTransport, TcpTransport, Transport};

pub type Result<T> = std::result::Result<T, ProtoError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(u32),
    #[error("connection closed by peer")]
    Closed,
    #[error("timed out waiting for a message")]
    Timeout,
}
