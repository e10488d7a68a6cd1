//! Frame codec: `type (1) || payload length (2, BE) || payload`.

use std::io::{self, Read, Write};

use crate::pki::{ELEMENT_LEN, SIGNATURE_LEN};
use crate::protocol::{Ms1, Ms2, Mu1, Mu2, WireMessage, MS1_LEN, MS2_LEN, MU1_LEN, MU2_LEN};

pub const HEADER_LEN: usize = 3;

pub const TYPE_MU1: u8 = 0x01;
pub const TYPE_MS1: u8 = 0x02;
pub const TYPE_MU2: u8 = 0x03;
pub const TYPE_MS2: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("message type 0x{ty:02x} needs a {expected}-byte payload, header says {found}")]
    LengthMismatch {
        ty: u8,
        expected: usize,
        found: usize,
    },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
}

pub fn type_byte(msg: &WireMessage) -> u8 {
    match msg {
        WireMessage::Mu1(_) => TYPE_MU1,
        WireMessage::Ms1(_) => TYPE_MS1,
        WireMessage::Mu2(_) => TYPE_MU2,
        WireMessage::Ms2(_) => TYPE_MS2,
    }
}

pub fn payload_len(ty: u8) -> Option<usize> {
    match ty {
        TYPE_MU1 => Some(MU1_LEN),
        TYPE_MS1 => Some(MS1_LEN),
        TYPE_MU2 => Some(MU2_LEN),
        TYPE_MS2 => Some(MS2_LEN),
        _ => None,
    }
}

/// Fields in protocol order, no header.
pub fn encode_payload(msg: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(MS1_LEN);
    match msg {
        WireMessage::Mu1(m) => {
            out.extend_from_slice(&m.uid.to_be_bytes());
            out.extend_from_slice(&m.com_u);
            out.extend_from_slice(&m.sigma);
        }
        WireMessage::Ms1(m) => {
            out.extend_from_slice(&m.sid.to_be_bytes());
            out.extend_from_slice(&m.com_s);
            out.extend_from_slice(&m.h_gamma);
            out.extend_from_slice(&m.sigma);
            out.extend_from_slice(&m.s);
        }
        WireMessage::Mu2(m) => {
            out.extend_from_slice(&m.u);
            out.extend_from_slice(&m.auth_u);
        }
        WireMessage::Ms2(m) => out.extend_from_slice(&m.auth_s),
    }
    out
}

/// Builds a frame around an arbitrary payload (which may have the wrong length).
pub fn frame(ty: u8, payload: &[u8]) -> Vec<u8> {
    let len = u16::try_from(payload.len()).expect("payload fits u16");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.push(ty);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    frame(type_byte(msg), &encode_payload(msg))
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, tail) = self.0.split_at(N);
        self.0 = tail;
        head.try_into().expect("split at N")
    }
}

pub fn decode_payload(ty: u8, payload: &[u8]) -> Result<WireMessage, WireError> {
    let expected = payload_len(ty).ok_or(WireError::UnknownType(ty))?;
    if payload.len() != expected {
        return Err(WireError::LengthMismatch {
            ty,
            expected,
            found: payload.len(),
        });
    }
    let mut c = Cursor(payload);
    Ok(match ty {
        TYPE_MU1 => WireMessage::Mu1(Mu1 {
            uid: u64::from_be_bytes(c.take::<8>()),
            com_u: c.take::<ELEMENT_LEN>(),
            sigma: c.take::<SIGNATURE_LEN>(),
        }),
        TYPE_MS1 => WireMessage::Ms1(Ms1 {
            sid: u64::from_be_bytes(c.take::<8>()),
            com_s: c.take::<ELEMENT_LEN>(),
            h_gamma: c.take::<ELEMENT_LEN>(),
            sigma: c.take::<SIGNATURE_LEN>(),
            s: c.take::<ELEMENT_LEN>(),
        }),
        TYPE_MU2 => WireMessage::Mu2(Mu2 {
            u: c.take::<ELEMENT_LEN>(),
            auth_u: c.take::<32>(),
        }),
        _ => WireMessage::Ms2(Ms2 {
            auth_s: c.take::<32>(),
        }),
    })
}

/// Decodes exactly one frame; anything after it is an error.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let ty = bytes[0];
    let declared = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
    let expected = payload_len(ty).ok_or(WireError::UnknownType(ty))?;
    if declared != expected {
        return Err(WireError::LengthMismatch {
            ty,
            expected,
            found: declared,
        });
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() < declared {
        return Err(WireError::Truncated {
            needed: HEADER_LEN + declared,
            available: bytes.len(),
        });
    }
    if body.len() > declared {
        return Err(WireError::TrailingBytes(body.len() - declared));
    }
    decode_payload(ty, body)
}

/// Reads one frame (header and declared payload) from a stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = u16::from_be_bytes([header[1], header[2]]) as usize;
    let mut out = vec![0u8; HEADER_LEN + len];
    out[..HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut out[HEADER_LEN..])?;
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

/// Field widths in bits: identifiers, group elements, scalars, signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldWidths {
    pub l_i: usize,
    pub l_e: usize,
    pub l_q: usize,
    pub l_s: usize,
}

impl FieldWidths {
    /// BLS12-381 G1 compressed points, 255-bit scalars in 32 bytes, P-256 signatures.
    pub const DEPLOYED: FieldWidths = FieldWidths {
        l_i: 64,
        l_e: 384,
        l_q: 256,
        l_s: 512,
    };

    /// Payload bytes of the four mutual-authentication messages.
    pub fn mutual_message_bytes(&self) -> [usize; 4] {
        [
            (self.l_i + self.l_e + self.l_s) / 8,
            (self.l_i + 3 * self.l_e + self.l_s) / 8,
            (self.l_e + self.l_q) / 8,
            self.l_q / 8,
        ]
    }

    /// `5 l_e + 2 l_q + 2 l_s + 2 l_i`, in bytes.
    pub fn mutual_total_bytes(&self) -> usize {
        (5 * self.l_e + 2 * self.l_q + 2 * self.l_s + 2 * self.l_i) / 8
    }

    /// Variant where only the client authenticates: the SP sends no signed
    /// credential and no final tag. `5 l_e + l_q + l_s + l_i`, in bytes.
    pub fn unilateral_total_bytes(&self) -> usize {
        (5 * self.l_e + self.l_q + self.l_s + self.l_i) / 8
    }
}
