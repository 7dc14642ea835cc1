//! Single-plane images and the binary PGM/PPM formats used for frames,
//! masks and rendered event frames.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A dense H×W grid of 64-bit floats, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "plane {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Quantizes to 8 bits with rounding and clamping to [0, 255].
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            maxval: 255,
            data: self
                .data
                .iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u16)
                .collect(),
        }
    }
}

/// Grayscale image as stored in a PGM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            maxval: 255,
            data: vec![0; width * height],
        }
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        if self.maxval < 256 {
            let bytes: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
            w.write_all(&bytes)?;
        } else {
            for &v in &self.data {
                w.write_all(&v.to_be_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let (magic, header, pos) = parse_pnm_header(&buf)?;
        if magic != *b"P5" {
            return Err(Error::format("PGM", "expected P5 magic"));
        }
        let [width, height, maxval] = header;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::format("PGM", format!("bad maxval {maxval}")));
        }
        let n = width * height;
        let bpp = if maxval < 256 { 1 } else { 2 };
        let body = &buf[pos..];
        if body.len() < n * bpp {
            return Err(Error::format("PGM", "truncated pixel data"));
        }
        let data = if bpp == 1 {
            body[..n].iter().map(|&b| u16::from(b)).collect()
        } else {
            body[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        Ok(GrayImage {
            width,
            height,
            maxval: maxval as u16,
            data,
        })
    }
}

/// 8-bit RGB image as stored in a PPM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0; 3]; width * height],
        }
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|px| px.iter().copied()).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let (magic, [width, height, maxval], pos) = parse_pnm_header(&buf)?;
        if magic != *b"P6" || maxval != 255 {
            return Err(Error::format("PPM", "expected 8-bit P6"));
        }
        let n = width * height;
        let body = &buf[pos..];
        if body.len() < 3 * n {
            return Err(Error::format("PPM", "truncated pixel data"));
        }
        let data = body[..3 * n]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }
}

/// Parses "Px W H MAXVAL" plus the single whitespace byte that ends the
/// header. Comments (`#` to end of line) are skipped.
fn parse_pnm_header(buf: &[u8]) -> Result<([u8; 2], [usize; 3], usize)> {
    if buf.len() < 2 {
        return Err(Error::format("PNM", "file too short"));
    }
    let magic = [buf[0], buf[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match buf.get(pos) {
                Some(b'#') => {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::format("PNM", "truncated header")),
            }
        }
        let start = pos;
        while pos < buf.len() && buf[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PNM", "expected a number in header"));
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PNM", "header number out of range"))?;
    }
    match buf.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PNM", "missing whitespace after header")),
    }
    Ok((magic, fields, pos))
}
