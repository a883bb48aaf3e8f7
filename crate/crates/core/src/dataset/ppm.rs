//! Binary (P6) PPM with a maxval of 255.

use thiserror::Error;

use super::Image;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PpmError {
    #[error("not a PPM file")]
    BadMagic,
    #[error("unsupported netpbm variant P{0}; only binary RGB (P6) is supported")]
    Unsupported(char),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} is not supported; only 255")]
    MaxVal(u32),
    #[error("pixel payload truncated: {found} of {expected} bytes")]
    Truncated { expected: usize, found: usize },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::Header(format!("expected {what}")))
    }
}

pub fn read_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    match bytes {
        [b'P', b'6', ..] => {}
        [b'P', d @ b'1'..=b'7', ..] => return Err(PpmError::Unsupported(*d as char)),
        _ => return Err(PpmError::BadMagic),
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(PpmError::MaxVal(maxval));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PpmError::Header("missing whitespace before pixel data".into()));
    }
    let start = cur.pos + 1;
    let expected = width * height * 3;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Image::new(width, height, payload[..expected].to_vec()).map_err(|e| PpmError::Header(e.to_string()))
}

pub fn write_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}
