//! `SGRM` frames exchanged with external segmentation models.
//!
//! Every frame is a 15-byte header followed by a payload whose length is
//! fixed by the header. Integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SGRM" (53 47 52 4D)
//! 4       1     version 0x01
//! 5       1     msg_type: 0x01 segment-request, 0x02 segment-response, 0x7F error
//! 6       4     height (u32)
//! 10      4     width  (u32)
//! 14      1     channels
//! 15      ..    payload
//! ```
//!
//! | msg_type | height / width     | channels | payload                              |
//! |----------|--------------------|----------|--------------------------------------|
//! | 0x01     | image size         | 1 or 3   | `H*W*C` samples, row-major, 8-bit    |
//! | 0x02     | label map size     | 0        | `H*W` labels, row-major, u16 LE      |
//! | 0x7F     | message length / 0 | 0        | UTF-8 message of `height` bytes      |
//!
//! Example: a 1x2 grayscale request with samples `[7, 9]`:
//!
//! ```text
//! 53 47 52 4D 01 01 01 00 00 00 02 00 00 00 01 07 09
//! ```
//!
//! and the matching response labelling both pixels with class 3:
//!
//! ```text
//! 53 47 52 4D 01 02 01 00 00 00 02 00 00 00 00 03 00 03 00
//! ```
//!
//! Frames are written back to back on the transport (stdin/stdout of a
//! subprocess, or a stream socket); the header delimits each one.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::imaging::{Image, LabelMap};

pub const MAGIC: &[u8; 4] = b"SGRM";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 15;
pub const MSG_REQUEST: u8 = 0x01;
pub const MSG_RESPONSE: u8 = 0x02;
pub const MSG_ERROR: u8 = 0x7F;
/// Largest payload accepted from the wire (1 GiB).
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}, expected \"SGRM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("payload length mismatch: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("header truncated: {0} of 15 bytes")]
    ShortHeader(usize),
    #[error("error message is not valid UTF-8")]
    InvalidUtf8,
}

#[derive(Debug, Error)]
pub enum FrameReadError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Request(Image),
    Response(LabelMap),
    Error(String),
}

struct Header {
    msg_type: u8,
    height: u32,
    width: u32,
    channels: u8,
}

impl Header {
    fn parse(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::ShortHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(ProtocolError::BadVersion(bytes[4]));
        }
        let h = Header {
            msg_type: bytes[5],
            height: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
            width: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            channels: bytes[14],
        };
        h.payload_len()?;
        Ok(h)
    }

    /// Payload size implied by the header, after sanity checks.
    fn payload_len(&self) -> Result<usize, ProtocolError> {
        let (h, w) = (self.height as usize, self.width as usize);
        let len = match self.msg_type {
            MSG_REQUEST => {
                if h == 0 || w == 0 {
                    return Err(ProtocolError::BadHeader("request with zero dimension".into()));
                }
                if self.channels != 1 && self.channels != 3 {
                    return Err(ProtocolError::BadHeader(format!(
                        "request channels must be 1 or 3, got {}",
                        self.channels
                    )));
                }
                h.checked_mul(w).and_then(|p| p.checked_mul(self.channels as usize))
            }
            MSG_RESPONSE => {
                if h == 0 || w == 0 {
                    return Err(ProtocolError::BadHeader("response with zero dimension".into()));
                }
                if self.channels != 0 {
                    return Err(ProtocolError::BadHeader(format!(
                        "response channels must be 0, got {}",
                        self.channels
                    )));
                }
                h.checked_mul(w).and_then(|p| p.checked_mul(2))
            }
            MSG_ERROR => {
                if w != 0 || self.channels != 0 {
                    return Err(ProtocolError::BadHeader("error frame width and channels must be 0".into()));
                }
                Some(h)
            }
            t => return Err(ProtocolError::UnknownType(t)),
        };
        match len {
            Some(n) if n <= MAX_PAYLOAD => Ok(n),
            _ => Err(ProtocolError::BadHeader(format!(
                "payload for {}x{}x{} exceeds {} bytes",
                h, w, self.channels, MAX_PAYLOAD
            ))),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.channels);
    }

    fn frame(&self, payload: &[u8]) -> Result<Frame, ProtocolError> {
        let (h, w) = (self.height as usize, self.width as usize);
        match self.msg_type {
            MSG_REQUEST => Image::new(h, w, self.channels as usize, payload.to_vec())
                .map(Frame::Request)
                .map_err(|e| ProtocolError::BadHeader(e.to_string())),
            MSG_RESPONSE => {
                let labels = payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect();
                LabelMap::new(h, w, labels)
                    .map(Frame::Response)
                    .map_err(|e| ProtocolError::BadHeader(e.to_string()))
            }
            MSG_ERROR => String::from_utf8(payload.to_vec())
                .map(Frame::Error)
                .map_err(|_| ProtocolError::InvalidUtf8),
            t => Err(ProtocolError::UnknownType(t)),
        }
    }
}

fn dim(n: usize) -> u32 {
    u32::try_from(n).expect("dimension exceeds u32")
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Frame::Request(img) => {
                out.reserve(HEADER_LEN + img.samples().len());
                Header {
                    msg_type: MSG_REQUEST,
                    height: dim(img.height()),
                    width: dim(img.width()),
                    channels: img.channels() as u8,
                }
                .write(&mut out);
                out.extend_from_slice(img.samples());
            }
            Frame::Response(map) => {
                out.reserve(HEADER_LEN + map.labels().len() * 2);
                Header {
                    msg_type: MSG_RESPONSE,
                    height: dim(map.height()),
                    width: dim(map.width()),
                    channels: 0,
                }
                .write(&mut out);
                for l in map.labels() {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
            Frame::Error(msg) => {
                Header {
                    msg_type: MSG_ERROR,
                    height: dim(msg.len()),
                    width: 0,
                    channels: 0,
                }
                .write(&mut out);
                out.extend_from_slice(msg.as_bytes());
            }
        }
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, ProtocolError> {
        let header = Header::parse(bytes)?;
        let expected = header.payload_len()?;
        let actual = bytes.len() - HEADER_LEN;
        if actual != expected {
            return Err(ProtocolError::Length { expected, actual });
        }
        header.frame(&bytes[HEADER_LEN..])
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameReadError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(r, &mut header)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        return Err(ProtocolError::ShortHeader(got).into());
    }
    let h = Header::parse(&header)?;
    let expected = h.payload_len()?;
    let mut payload = vec![0u8; expected];
    let actual = read_full(r, &mut payload)?;
    if actual != expected {
        return Err(ProtocolError::Length { expected, actual }.into());
    }
    Ok(Some(h.frame(&payload)?))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_examples() {
        let req = Frame::Request(Image::new(1, 2, 1, vec![7, 9]).unwrap());
        assert_eq!(
            req.encode(),
            [0x53, 0x47, 0x52, 0x4D, 0x01, 0x01, 0x01, 0, 0, 0, 0x02, 0, 0, 0, 0x01, 0x07, 0x09]
        );
        let resp = Frame::Response(LabelMap::new(1, 2, vec![3, 3]).unwrap());
        assert_eq!(
            resp.encode(),
            [0x53, 0x47, 0x52, 0x4D, 0x01, 0x02, 0x01, 0, 0, 0, 0x02, 0, 0, 0, 0x00, 0x03, 0x00, 0x03, 0x00]
        );
        for f in [req, resp, Frame::Error("boom".into())] {
            assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
        }
    }

    #[test]
    fn header_errors() {
        let good = Frame::Request(Image::new(1, 2, 1, vec![7, 9]).unwrap()).encode();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Frame::decode(&bad), Err(ProtocolError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(Frame::decode(&bad), Err(ProtocolError::BadVersion(2)));
        let mut bad = good.clone();
        bad[5] = 0x10;
        assert_eq!(Frame::decode(&bad), Err(ProtocolError::UnknownType(0x10)));
        let mut bad = good.clone();
        bad[14] = 2;
        assert!(matches!(Frame::decode(&bad), Err(ProtocolError::BadHeader(_))));
        assert_eq!(
            Frame::decode(&good[..16]),
            Err(ProtocolError::Length { expected: 2, actual: 1 })
        );
        assert_eq!(Frame::decode(&good[..3]), Err(ProtocolError::ShortHeader(3)));
    }

    #[test]
    fn oversized_headers_do_not_allocate() {
        let mut huge = Vec::new();
        Header {
            msg_type: MSG_REQUEST,
            height: u32::MAX,
            width: u32::MAX,
            channels: 3,
        }
        .write(&mut huge);
        assert!(matches!(Frame::decode(&huge), Err(ProtocolError::BadHeader(_))));
        assert!(matches!(
            read_frame(&mut &huge[..]),
            Err(FrameReadError::Protocol(ProtocolError::BadHeader(_)))
        ));
    }

    #[test]
    fn stream_reading() {
        let a = Frame::Error("x".into());
        let b = Frame::Response(LabelMap::new(2, 1, vec![1, 65535]).unwrap());
        let mut bytes = a.encode();
        bytes.extend(b.encode());
        let mut cursor = &bytes[..];
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(a));
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(b.clone()));
        assert_eq!(read_frame(&mut cursor).unwrap(), None);

        let enc = b.encode();
        let mut short = &enc[..enc.len() - 1];
        match read_frame(&mut short) {
            Err(FrameReadError::Protocol(ProtocolError::Length { expected: 4, actual: 3 })) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
