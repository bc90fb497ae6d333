//! Binary PPM (P6) and PGM (P5) reading and writing, 8-bit, no external
//! codecs. Written files re-parse to the exact written values.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a binary P6 color image; `rgb` holds w*h*3 bytes row-major.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != w * h * 3 {
        return Err(Error::LengthMismatch {
            what: "ppm pixel buffer",
            expected: w * h * 3,
            got: rgb.len(),
        });
    }
    let mut file = fs::File::create(path)?;
    write!(file, "P6\n{w} {h}\n255\n")?;
    file.write_all(rgb)?;
    Ok(())
}

/// Writes a binary P5 grayscale image; `gray` holds w*h bytes row-major.
pub fn write_pgm(path: &Path, w: usize, h: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != w * h {
        return Err(Error::LengthMismatch {
            what: "pgm pixel buffer",
            expected: w * h,
            got: gray.len(),
        });
    }
    let mut file = fs::File::create(path)?;
    write!(file, "P5\n{w} {h}\n255\n")?;
    file.write_all(gray)?;
    Ok(())
}

/// Reads a binary P6 image, returning (w, h, rgb bytes).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_netpbm(path, b"P6", 3)
}

/// Reads a binary P5 image, returning (w, h, gray bytes).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_netpbm(path, b"P5", 1)
}

fn read_netpbm(path: &Path, magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let name = path.display();
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "{name}: expected {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2usize;
    let mut header = [0usize; 3]; // width, height, maxval
    for slot in header.iter_mut() {
        *slot = parse_header_int(&bytes, &mut pos)
            .ok_or_else(|| Error::Format(format!("{name}: truncated header")))?;
    }
    let (w, h, maxval) = (header[0], header[1], header[2]);
    if maxval != 255 {
        return Err(Error::Format(format!(
            "{name}: only maxval 255 is supported, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = w * h * channels;
    let payload = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| Error::Format(format!("{name}: truncated pixel data")))?;
    Ok((w, h, payload.to_vec()))
}

/// Parses the next ASCII integer, skipping whitespace and `#` comments.
/// Leaves `pos` at the first byte after the number.
fn parse_header_int(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()?
        .parse()
        .ok()
}

/// Widens 8-bit pixels to normalized [0, 1] reals.
pub fn bytes_to_unit(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| f64::from(b) / 255.0).collect()
}
