//! Binary PPM (`P6`, maxval 255).

use std::path::Path;

use super::{convert_channel_order, ChannelOrder, Image, ImageError, Result};

fn err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(ImageError::Ppm { offset, msg: msg.into() })
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return err(start, format!("expected {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(())
            .or_else(|_| err(start, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return err(0, "missing magic");
    }
    match &bytes[..2] {
        b"P6" => {}
        b"P3" => return err(0, "ASCII PPM (P3) is not supported"),
        _ => return err(0, "not a binary PPM (expected P6)"),
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space_and_comments();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return err(maxval_at, format!("maxval {maxval} is not supported (only 255)"));
    }
    if width == 0 || height == 0 {
        return err(maxval_at, "zero-sized image");
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return err(h.pos, "expected a single whitespace byte before pixel data");
    }
    let start = h.pos + 1;
    let need = width * height * 3;
    let have = bytes.len() - start;
    if have < need {
        return err(bytes.len(), format!("truncated pixel data: {have} of {need} bytes"));
    }
    if have > need {
        return err(start + need, "trailing bytes after pixel data");
    }
    Image::rgb(height, width, bytes[start..].to_vec())
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    let rgb = convert_channel_order(img, ChannelOrder::RGB)?;
    let mut out = format!("P6\n{} {}\n255\n", rgb.width, rgb.height).into_bytes();
    out.extend_from_slice(&rgb.data);
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| ImageError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    decode_ppm(&bytes)
}
