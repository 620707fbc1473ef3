//! Binary PGM (P5, 8-bit) images and label masks.

use std::fs;
use std::path::Path;

use retifluid_core::image::{GrayImage, LabelMap};

use crate::error::{CliError, CliResult};

/// Raw 8-bit raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn format_err(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Format(format!("{}: {}", path.display(), msg.into()))
}

/// Parses a P5 file with maxval 255. Comments (`#` to end of line) may
/// appear between header fields.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> CliResult<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(path, "not a binary PGM (expected magic P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "malformed header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| format_err(path, format!("header value {text} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(path, format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, "missing whitespace after header"));
    }
    pos += 1;
    let len = width * height;
    let payload = &bytes[pos..];
    if payload.len() < len {
        return Err(format_err(
            path,
            format!("truncated payload: {} of {} bytes", payload.len(), len),
        ));
    }
    Ok(Pgm {
        width,
        height,
        data: payload[..len].to_vec(),
    })
}

pub fn encode_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pgm(path: &Path) -> CliResult<Pgm> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pgm(&bytes, path)
}

pub fn write_pgm(path: &Path, img: &Pgm) -> CliResult<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| CliError::io(path, e))
}

/// Grey levels scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> CliResult<GrayImage> {
    let p = read_pgm(path)?;
    let data = p.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(GrayImage::new(p.height, p.width, data)?)
}

/// Inverse of [`load_image`]: values are clamped to `[0, 1]` and rounded to
/// the nearest level.
pub fn save_image(path: &Path, img: &GrayImage) -> CliResult<()> {
    let data = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(
        path,
        &Pgm {
            width: img.width,
            height: img.height,
            data,
        },
    )
}

/// Raw class indices.
pub fn load_mask(path: &Path) -> CliResult<LabelMap> {
    let p = read_pgm(path)?;
    Ok(LabelMap::new(p.height, p.width, p.data)?)
}

pub fn save_mask(path: &Path, mask: &LabelMap) -> CliResult<()> {
    write_pgm(
        path,
        &Pgm {
            width: mask.width,
            height: mask.height,
            data: mask.data.clone(),
        },
    )
}
