use std::fs;
use std::io::Write;
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

/// `round(0.299 R + 0.587 G + 0.114 B)`
#[inline]
pub fn luma_from_rgb(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Loads PNG (any color type) or binary PGM as 8-bit grayscale.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return read_pgm(&bytes);
    }
    let dynimg = image::load_from_memory(&bytes)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    use image::DynamicImage::*;
    let data = match dynimg {
        ImageLuma8(g) => g.into_raw(),
        ImageLumaA8(_) | ImageLuma16(_) | ImageLumaA16(_) => dynimg.to_luma8().into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma_from_rgb(p[0], p[1], p[2]))
            .collect(),
    };
    GrayImage::from_vec(w, h, data)
}

/// Writes PNG unless the extension is `.pgm`.
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_pgm(img, &mut f).map_err(|e| Error::io(path, e))
    } else {
        image::save_buffer(
            path,
            img.data(),
            img.width() as u32,
            img.height() as u32,
            image::ExtendedColorType::L8,
        )?;
        Ok(())
    }
}

pub fn write_pgm(img: &GrayImage, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    out.write_all(img.data())
}

/// Parses a binary (P5) PGM. 16-bit samples are rescaled to 8 bits.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |msg: &str| Error::InvalidArgument(format!("pgm: {msg}"));
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    // exactly one whitespace byte before the raster
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    let n = w * h;
    let raster = &bytes[pos.min(bytes.len())..];
    let data: Vec<u8> = if maxval < 256 {
        if raster.len() < n {
            return Err(bad("truncated raster"));
        }
        raster[..n]
            .iter()
            .map(|&v| {
                if maxval == 255 {
                    v
                } else {
                    (f64::from(v) * 255.0 / maxval as f64).round() as u8
                }
            })
            .collect()
    } else {
        if raster.len() < 2 * n {
            return Err(bad("truncated raster"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| {
                (f64::from(u16::from_be_bytes([c[0], c[1]])) * 255.0 / maxval as f64).round() as u8
            })
            .collect()
    };
    GrayImage::from_vec(w, h, data)
}
