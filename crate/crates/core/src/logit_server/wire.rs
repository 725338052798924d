//! Frames: a 4-byte big-endian payload length followed by a UTF-8 JSON object
//! whose `"kind"` field selects the message type.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames above this size are rejected as malformed.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum WireMessage {
    Hello { protocol_version: u32 },
    VocabReply { tokens: Vec<String> },
    Query { context: String },
    DistReply { probs: Vec<f64>, fallback: bool },
    Error { code: String, message: String },
}

impl WireMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        WireMessage::Error {
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

const KINDS: [&str; 5] = ["Hello", "VocabReply", "Query", "DistReply", "Error"];

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
    /// Length, encoding or JSON structure is invalid.
    #[error("bad frame: {0}")]
    BadFrame(String),
    /// Well-formed JSON naming a message kind this protocol does not have.
    #[error("unknown message kind {0:?}")]
    BadKind(String),
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let payload = serde_json::to_vec(msg).expect("wire messages always serialize");
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    frame
}

pub fn decode_payload(payload: &[u8]) -> Result<WireMessage, FrameError> {
    let text = std::str::from_utf8(payload).map_err(|e| FrameError::BadFrame(e.to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| FrameError::BadFrame(e.to_string()))?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| FrameError::BadFrame("payload has no string \"kind\"".into()))?;
    if !KINDS.contains(&kind) {
        return Err(FrameError::BadKind(kind.to_owned()));
    }
    serde_json::from_value(value).map_err(|e| FrameError::BadFrame(e.to_string()))
}

/// Writes one frame with a single `write_all`.
pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<WireMessage, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(FrameError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::BadFrame(format!(
            "frame length {len} exceeds limit"
        )));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    decode_payload(&payload)
}
