//! Binary PGM (P5) image I/O.
//!
//! Writes 8-bit files with maxval 255; reads any P5 file with a maxval in
//! 1..=255, normalizing samples to [0, 1]. Header comments (`#` to end of
//! line) are accepted anywhere whitespace is legal, as the format allows.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Serializes a single-image, single-channel tensor as an 8-bit P5 file.
pub fn save_image(img: &Tensor4, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!(
            "expected a single grayscale image, got shape {s}"
        )));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
    bytes.reserve(s.h * s.w);
    for &v in img.as_slice() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Scanner<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn fail(&self, msg: &str) -> Error {
        Error::Format {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_separators(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.fail(&format!("expected {what}")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| self.fail(&format!("unreadable {what}")))
    }
}

/// Parses a P5 file into a (1, 1, h, w) tensor with values in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor4> {
    let data = fs::read(path)?;
    let mut sc = Scanner { data: &data, pos: 0 };
    if !data.starts_with(b"P5") {
        return Err(sc.fail("not a binary PGM (missing P5 magic)"));
    }
    sc.pos = 2;
    let w = sc.number("width")?;
    let h = sc.number("height")?;
    let maxval = sc.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(sc.fail("zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(sc.fail("maxval must be in 1..=255 for single-byte samples"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if sc.pos >= data.len() || !data[sc.pos].is_ascii_whitespace() {
        return Err(sc.fail("expected whitespace before raster"));
    }
    sc.pos += 1;
    let need = h * w;
    let raster = &data[sc.pos..];
    if raster.len() < need {
        return Err(Error::Format {
            offset: data.len(),
            msg: format!("raster truncated: need {need} bytes, have {}", raster.len()),
        });
    }
    if raster.len() > need {
        return Err(Error::Format {
            offset: sc.pos + need,
            msg: format!("{} trailing bytes after raster", raster.len() - need),
        });
    }
    let scale = 1.0 / maxval as f64;
    let px = raster.iter().map(|&b| b as f64 * scale).collect();
    Tensor4::from_vec(Shape4::new(1, 1, h, w), px)
}
