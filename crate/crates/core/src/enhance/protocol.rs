//! Framed binary protocol spoken with external enhancer workers.
//!
//! A frame is `"UZEP" | type u8 | request id u64 | payload length u64 |
//! payload`, little-endian throughout. HELLO and CAPS carry UTF-8 JSON,
//! ENHANCE and RESULT carry raw RGB `f32` pixels, ERROR carries a UTF-8
//! message.

use std::io::{self, Read, Write};

use super::{EnhanceError, EnhanceRequest};
use crate::raster::Image;

pub const MAGIC: &[u8; 4] = b"UZEP";
pub const HEADER_LEN: usize = 21;
/// Largest payload accepted from a peer.
pub const MAX_PAYLOAD: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Hello = 0,
    Caps = 1,
    Enhance = 2,
    Result = 3,
    Error = 4,
}

impl TryFrom<u8> for FrameType {
    type Error = EnhanceError;

    fn try_from(v: u8) -> Result<Self, EnhanceError> {
        Ok(match v {
            0 => FrameType::Hello,
            1 => FrameType::Caps,
            2 => FrameType::Enhance,
            3 => FrameType::Result,
            4 => FrameType::Error,
            _ => return Err(EnhanceError::Protocol(format!("unknown frame type {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameType,
    pub id: u64,
    pub payload: Vec<u8>,
}

pub fn write_frame(w: &mut impl Write, kind: FrameType, id: u64, payload: &[u8]) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4] = kind as u8;
    header[5..13].copy_from_slice(&id.to_le_bytes());
    header[13..21].copy_from_slice(&(payload.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads until `buf` is full. Returns the number of bytes read, which is
/// short only at end of stream.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly between
/// frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, EnhanceError> {
    let mut header = [0u8; HEADER_LEN];
    match read_full(r, &mut header)? {
        0 => return Ok(None),
        HEADER_LEN => {}
        n => return Err(EnhanceError::Protocol(format!("truncated header ({n} of {HEADER_LEN} bytes)"))),
    }
    if &header[..4] != MAGIC {
        return Err(EnhanceError::Protocol(format!("bad magic {:02x?}", &header[..4])));
    }
    let kind = FrameType::try_from(header[4])?;
    let id = u64::from_le_bytes(header[5..13].try_into().unwrap());
    let len = u64::from_le_bytes(header[13..21].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(EnhanceError::Protocol(format!("payload of {len} bytes")));
    }
    let mut payload = vec![0u8; len as usize];
    let n = read_full(r, &mut payload)?;
    if n < payload.len() {
        return Err(EnhanceError::Protocol(format!("truncated payload ({n} of {len} bytes)")));
    }
    Ok(Some(Frame { kind, id, payload }))
}

fn put_pixels(out: &mut Vec<u8>, img: &Image) {
    out.reserve(img.data().len() * 4);
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EnhanceError> {
        if self.buf.len() < n {
            return Err(EnhanceError::Protocol("payload too short".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32, EnhanceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, EnhanceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn pixels(&mut self) -> Result<Image, EnhanceError> {
        let w = self.u32()? as usize;
        let h = self.u32()? as usize;
        let expected = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(12))
            .ok_or_else(|| EnhanceError::Protocol(format!("image {w}x{h}")))?;
        if self.buf.len() != expected {
            return Err(EnhanceError::Protocol(format!(
                "{w}x{h} image needs {expected} bytes, payload has {}",
                self.buf.len()
            )));
        }
        let data = self
            .take(expected)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Image::from_vec(w, h, 3, data))
    }
}

pub fn encode_enhance(req: &EnhanceRequest) -> Vec<u8> {
    let lr = req.lr.to_rgb();
    let mut out = Vec::with_capacity(24 + lr.data().len() * 4);
    out.extend_from_slice(&req.zoom.to_le_bytes());
    out.extend_from_slice(&req.step_index.to_le_bytes());
    out.extend_from_slice(&req.step_count.to_le_bytes());
    out.extend_from_slice(&(lr.width() as u32).to_le_bytes());
    out.extend_from_slice(&(lr.height() as u32).to_le_bytes());
    put_pixels(&mut out, &lr);
    out
}

pub fn decode_enhance(payload: &[u8]) -> Result<EnhanceRequest, EnhanceError> {
    let mut c = Cursor { buf: payload };
    let zoom = c.f64()?;
    let step_index = c.u32()?;
    let step_count = c.u32()?;
    let lr = c.pixels()?;
    Ok(EnhanceRequest {
        lr,
        zoom,
        step_index,
        step_count,
        window_origin: (0, 0),
    })
}

pub fn encode_result(img: &Image) -> Vec<u8> {
    let img = img.to_rgb();
    let mut out = Vec::with_capacity(8 + img.data().len() * 4);
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    put_pixels(&mut out, &img);
    out
}

pub fn decode_result(payload: &[u8]) -> Result<Image, EnhanceError> {
    Cursor { buf: payload }.pixels()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, FrameType::Caps, 42, b"{}").unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 2);
        assert_eq!(&buf[..4], b"UZEP");
        assert_eq!(buf[4], 1);
        let f = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(f, Frame { kind: FrameType::Caps, id: 42, payload: b"{}".to_vec() });
        assert!(read_frame(&mut &buf[..0]).unwrap().is_none());
    }

    #[test]
    fn malformed_frames_are_protocol_errors() {
        let mut buf = Vec::new();
        write_frame(&mut buf, FrameType::Result, 1, &[0; 10]).unwrap();
        assert!(matches!(read_frame(&mut &buf[..7]), Err(EnhanceError::Protocol(_))));
        assert!(matches!(read_frame(&mut &buf[..25]), Err(EnhanceError::Protocol(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_frame(&mut bad.as_slice()), Err(EnhanceError::Protocol(_))));
        bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_frame(&mut bad.as_slice()), Err(EnhanceError::Protocol(_))));
    }

    #[test]
    fn payload_round_trip() {
        let lr = Image::from_fn(3, 2, 3, |x, y, c| (x + y * 3 + c) as f32 * 0.1);
        let mut req = EnhanceRequest::new(lr.clone(), 6.93);
        req.step_index = 2;
        req.step_count = 5;
        let p = encode_enhance(&req);
        assert_eq!(p.len(), 24 + 3 * 2 * 12);
        let back = decode_enhance(&p).unwrap();
        assert_eq!((back.zoom, back.step_index, back.step_count), (6.93, 2, 5));
        assert_eq!(back.lr, lr);
        assert_eq!(decode_result(&encode_result(&lr)).unwrap(), lr);
        assert!(decode_result(&encode_result(&lr)[..20]).is_err());
    }
}
