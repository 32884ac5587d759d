//! Binary portable graymap (P5) with maxval 255.

use crate::image::GrayImage;
use crate::{Error, Result};

/// Largest side accepted when decoding.
pub const MAX_SIDE: usize = 1 << 14;

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(Error::parse("pgm", format!("expected whitespace at byte {start}")));
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        if digits.is_empty() || digits.len() > 9 {
            return Err(Error::parse("pgm", format!("bad {what} at byte {start}")));
        }
        Ok(digits.parse().expect("at most nine digits"))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::parse("pgm", "missing P5 magic"));
    }
    let mut h = Header { bytes, pos: 2 };
    h.skip_space()?;
    let width = h.number("width")?;
    h.skip_space()?;
    let height = h.number("height")?;
    h.skip_space()?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse("pgm", format!("maxval must be 255, got {maxval}")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse("pgm", "missing separator after maxval"));
    }
    let data = &bytes[h.pos + 1..];
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::parse("pgm", format!("unsupported size {width}x{height}")));
    }
    if data.len() != width * height {
        return Err(Error::parse("pgm", format!("expected {} pixel bytes, found {}", width * height, data.len())));
    }
    GrayImage::from_raw(width, height, data.to_vec())
}
