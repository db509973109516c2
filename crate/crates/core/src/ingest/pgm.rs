//! Binary PGM (P5, maxval 255) depth maps. Gray 0 is nearest to the camera.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(Error::Argument(format!(
                "depth map {width}x{height} with {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.values[y as usize * self.width as usize + x as usize] = v;
    }

    /// Paints the half-open pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, v: u8) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set(x, y, v);
            }
        }
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.values);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Header<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.to_string(),
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("{what} out of range")))
    }
}

/// Decodes a P5 image with maxval 255. `origin` labels diagnostics.
pub fn parse_pgm(bytes: &[u8], origin: &str) -> Result<DepthMap> {
    let mut h = Header { bytes, pos: 0, origin };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(h.err(format!("magic {magic:?}; only binary P5 is accepted")));
    }
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(h.err(format!("maxval {maxval}; only 255 is accepted")));
    }
    if width == 0 || height == 0 {
        return Err(h.err(format!("empty image {width}x{height}")));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(h.err("missing whitespace after maxval")),
    }
    let raster = &bytes[h.pos..];
    let expected = width as usize * height as usize;
    if raster.len() < expected {
        return Err(Error::Length {
            path: origin.to_string(),
            expected,
            found: raster.len(),
        });
    }
    if raster.len() > expected {
        return Err(h.err(format!("{} trailing bytes after raster", raster.len() - expected)));
    }
    DepthMap::new(width, height, raster.to_vec())
}

pub fn load_depth_map(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\x80\x07";
        let m = parse_pgm(bytes, "t").unwrap();
        assert_eq!(m.values(), &[0, 255, 128, 7]);
        assert_eq!(m.to_pgm_bytes(), bytes.to_vec());
    }

    #[test]
    fn header_comments() {
        let m = parse_pgm(b"P5 # depth\n2 1 # size\n255\n\x01\x02", "t").unwrap();
        assert_eq!(m.get(1, 0), 2);
    }

    #[test]
    fn rejects_16_bit() {
        let e = parse_pgm(b"P5\n1 1\n65535\n\x00\x00", "t").unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
    }

    #[test]
    fn rejects_ascii_variant() {
        let e = parse_pgm(b"P2\n2 1\n255\n0 1\n", "t").unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "{e}");
    }

    #[test]
    fn truncated_raster() {
        let e = parse_pgm(b"P5\n2 2\n255\n\x00\x01\x02", "t").unwrap_err();
        assert!(matches!(
            e,
            Error::Length {
                expected: 4,
                found: 3,
                ..
            }
        ));
    }
}
