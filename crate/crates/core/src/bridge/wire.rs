//! Frame codec and message schema for protocol version 1.
//!
//! A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
//! object whose `kind` field selects the message type. Pixel buffers travel
//! as base64 (standard alphabet, padded) over row-major little-endian
//! `f32` values, or raw bytes for labels.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames larger than this are rejected as malformed.
pub const MAX_FRAME_BYTES: u32 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSupport {
    pub image: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BridgeMessage {
    /// Sent by the host with only `protocol_version`; the child answers with
    /// every field filled in.
    Hello {
        protocol_version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend_name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        required_width: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        required_height: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_support: Option<u32>,
    },
    SegmentRequest {
        w: u32,
        h: u32,
        query: String,
        support: Vec<WireSupport>,
    },
    SegmentResponse {
        prob: String,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeHandshake {
    pub protocol_version: u32,
    pub backend_name: String,
    pub required_width: u32,
    pub required_height: u32,
    pub max_support: u32,
}

impl BridgeHandshake {
    pub fn required_size(&self) -> Option<(usize, usize)> {
        if self.required_width == 0 && self.required_height == 0 {
            None
        } else {
            Some((self.required_width as usize, self.required_height as usize))
        }
    }

    pub fn to_message(&self) -> BridgeMessage {
        BridgeMessage::Hello {
            protocol_version: self.protocol_version,
            backend_name: Some(self.backend_name.clone()),
            required_width: Some(self.required_width),
            required_height: Some(self.required_height),
            max_support: Some(self.max_support),
        }
    }
}

pub fn write_frame<W: Write>(out: &mut W, msg: &BridgeMessage) -> io::Result<()> {
    let payload = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::other("frame too large"))?;
    out.write_all(&len.to_be_bytes())?;
    out.write_all(&payload)?;
    out.flush()
}

/// Reads one raw frame payload. Returns `Ok(None)` on a clean EOF before the
/// length prefix.
pub fn read_frame<R: Read>(input: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match input.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len as usize];
    input.read_exact(&mut payload)?;
    Ok(Some(payload))
}

pub fn decode_message(payload: &[u8]) -> Result<BridgeMessage, serde_json::Error> {
    serde_json::from_slice(payload)
}

pub fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!(
            "f32 buffer has {} bytes, not a multiple of 4",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_u8(values: &[u8]) -> String {
    STANDARD.encode(values)
}

pub fn decode_u8(text: &str) -> Result<Vec<u8>, String> {
    STANDARD.decode(text).map_err(|e| e.to_string())
}
