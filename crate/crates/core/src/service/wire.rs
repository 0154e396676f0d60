//! Length-prefixed frames: `u32 LE length | u8 type | payload`, where the
//! length counts the type byte and the payload.

use std::io::{Read, Write};

use crate::error::{PmtError, Result};

pub const MAX_FRAME: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    Attest = 2,
    Query = 3,
    Response = 4,
    Reject = 5,
}

impl FrameType {
    pub fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            1 => FrameType::Hello,
            2 => FrameType::Attest,
            3 => FrameType::Query,
            4 => FrameType::Response,
            5 => FrameType::Reject,
            _ => return Err(PmtError::Wire(format!("unknown frame type {b}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub ty: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(ty: FrameType, payload: Vec<u8>) -> Self {
        Frame { ty, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32 + 1).to_le_bytes());
        out.push(self.ty as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the front of `buf`, returning it and the bytes
    /// consumed, or `None` when `buf` holds only part of a frame.
    pub fn decode(buf: &[u8]) -> Result<Option<(Frame, usize)>> {
        if buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        if len == 0 || len > MAX_FRAME {
            return Err(PmtError::Wire(format!("bad frame length {len}")));
        }
        if buf.len() < 4 + len {
            return Ok(None);
        }
        let ty = FrameType::from_u8(buf[4])?;
        Ok(Some((Frame::new(ty, buf[5..4 + len].to_vec()), 4 + len)))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    /// Blocking read of one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Frame>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len == 0 || len > MAX_FRAME {
            return Err(PmtError::Wire(format!("bad frame length {len}")));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        let ty = FrameType::from_u8(body[0])?;
        body.remove(0);
        Ok(Some(Frame::new(ty, body)))
    }
}

/// Why the CA or TA refused a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RejectCode {
    /// Pending queue full; resend later.
    Capacity = 1,
    /// MAC or sequence failure; the session is closed.
    ChannelTeardown = 2,
    UnknownSession = 3,
    Malformed = 4,
}

impl RejectCode {
    pub fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            1 => RejectCode::Capacity,
            2 => RejectCode::ChannelTeardown,
            3 => RejectCode::UnknownSession,
            4 => RejectCode::Malformed,
            _ => return Err(PmtError::Wire(format!("unknown reject code {b}"))),
        })
    }

    pub fn retriable(self) -> bool {
        self == RejectCode::Capacity
    }
}

/// `session u64 | code u8 | seq u64` in clear.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reject {
    pub session: u64,
    pub code: RejectCode,
    pub seq: u64,
}

impl Reject {
    pub fn frame(&self) -> Frame {
        let mut p = Vec::with_capacity(17);
        p.extend_from_slice(&self.session.to_le_bytes());
        p.push(self.code as u8);
        p.extend_from_slice(&self.seq.to_le_bytes());
        Frame::new(FrameType::Reject, p)
    }

    pub fn parse(f: &Frame) -> Result<Self> {
        if f.ty != FrameType::Reject || f.payload.len() != 17 {
            return Err(PmtError::Wire("malformed REJECT".into()));
        }
        Ok(Reject {
            session: u64::from_le_bytes(f.payload[..8].try_into().unwrap()),
            code: RejectCode::from_u8(f.payload[8])?,
            seq: u64::from_le_bytes(f.payload[9..].try_into().unwrap()),
        })
    }
}
