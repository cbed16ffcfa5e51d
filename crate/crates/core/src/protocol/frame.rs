//! Datagram framing.
//!
//! ```text
//! 0      4        8         9            11           13            15
//! | AVE1 | msg_id | msg_type | frag_index | frag_count | payload_len | payload...
//! ```
//! All header integers are big-endian.

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AVE1";
pub const HEADER_LEN: usize = 15;
pub const MAX_PAYLOAD: usize = 1200;
pub const MAX_FRAGMENTS: usize = u16::MAX as usize;
/// Largest body [`encode`] accepts.
pub const MAX_BODY: usize = MAX_FRAGMENTS * MAX_PAYLOAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("datagram shorter than the header")]
    Short,
    #[error("bad magic")]
    BadMagic,
    #[error("payload_len {0} exceeds {MAX_PAYLOAD}")]
    PayloadTooLong(usize),
    #[error("payload_len {declared} but {actual} payload bytes present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("frag_index {index} not below frag_count {count}")]
    BadFragment { index: u16, count: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("body of {0} bytes exceeds the {MAX_BODY}-byte limit")]
pub struct EncodeError(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_id: u32,
    pub msg_type: u8,
    pub frag_index: u16,
    pub frag_count: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.msg_id.to_be_bytes());
        out.push(self.msg_type);
        out.extend_from_slice(&self.frag_index.to_be_bytes());
        out.extend_from_slice(&self.frag_count.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse one datagram. The datagram must hold exactly one frame.
    pub fn parse(d: &[u8]) -> Result<Frame, FrameError> {
        if d.len() < HEADER_LEN {
            return Err(FrameError::Short);
        }
        if d[0..4] != MAGIC {
            return Err(FrameError::BadMagic);
        }
        let be16 = |i: usize| u16::from_be_bytes([d[i], d[i + 1]]);
        let msg_id = u32::from_be_bytes([d[4], d[5], d[6], d[7]]);
        let msg_type = d[8];
        let frag_index = be16(9);
        let frag_count = be16(11);
        let payload_len = be16(13) as usize;
        if payload_len > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(payload_len));
        }
        let actual = d.len() - HEADER_LEN;
        if actual != payload_len {
            return Err(FrameError::LengthMismatch {
                declared: payload_len,
                actual,
            });
        }
        if frag_index >= frag_count {
            return Err(FrameError::BadFragment {
                index: frag_index,
                count: frag_count,
            });
        }
        Ok(Frame {
            msg_id,
            msg_type,
            frag_index,
            frag_count,
            payload: d[HEADER_LEN..].to_vec(),
        })
    }
}

/// Split a body into frames of at most [`MAX_PAYLOAD`] bytes. An empty body
/// still produces one frame.
pub fn encode(msg_id: u32, msg_type: u8, body: &[u8]) -> Result<Vec<Frame>, EncodeError> {
    if body.len() > MAX_BODY {
        return Err(EncodeError(body.len()));
    }
    let count = body.len().div_ceil(MAX_PAYLOAD).max(1);
    let frames = (0..count)
        .map(|i| {
            let end = ((i + 1) * MAX_PAYLOAD).min(body.len());
            Frame {
                msg_id,
                msg_type,
                frag_index: i as u16,
                frag_count: count as u16,
                payload: body[i * MAX_PAYLOAD..end].to_vec(),
            }
        })
        .collect();
    Ok(frames)
}
