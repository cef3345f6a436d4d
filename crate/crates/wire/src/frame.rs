//! Framing: a 4-byte big-endian payload length followed by the UTF-8 JSON
//! payload.

use crate::message::Message;

pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
pub const HEADER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("NeedMoreBytes: need {needed} more bytes")]
    NeedMoreBytes { needed: usize },
    #[error("FrameTooLarge: {len} bytes exceeds {MAX_FRAME_LEN}")]
    FrameTooLarge { len: usize },
    #[error("InvalidUtf8: payload is not UTF-8")]
    InvalidUtf8,
    #[error("{0}")]
    InvalidMessage(String),
}

pub fn encode_payload(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(FrameError::FrameTooLarge { len: payload.len() });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn encode(message: &Message) -> Result<Vec<u8>, FrameError> {
    encode_payload(&message.to_json())
}

/// Splits one frame off the front of `buf`, returning its payload and the
/// number of bytes consumed.
pub fn split_frame(buf: &[u8]) -> Result<(&[u8], usize), FrameError> {
    if buf.len() < HEADER_LEN {
        return Err(FrameError::NeedMoreBytes { needed: HEADER_LEN - buf.len() });
    }
    let len = u32::from_be_bytes(buf[..HEADER_LEN].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::FrameTooLarge { len });
    }
    let total = HEADER_LEN + len;
    if buf.len() < total {
        return Err(FrameError::NeedMoreBytes { needed: total - buf.len() });
    }
    Ok((&buf[HEADER_LEN..total], total))
}

pub fn decode_payload(payload: &[u8]) -> Result<Message, FrameError> {
    std::str::from_utf8(payload).map_err(|_| FrameError::InvalidUtf8)?;
    Message::from_json(payload).map_err(|e| FrameError::InvalidMessage(e.to_string()))
}

/// Decodes one frame from the front of `buf`.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    let (payload, used) = split_frame(buf)?;
    Ok((decode_payload(payload)?, used))
}

/// Incremental decoder for a byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. After an
    /// error the stream is unusable.
    pub fn next_message(&mut self) -> Result<Option<Message>, FrameError> {
        match split_frame(&self.buf) {
            Ok((payload, used)) => {
                let message = decode_payload(payload);
                self.buf.drain(..used);
                message.map(Some)
            }
            Err(FrameError::NeedMoreBytes { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}
