//! Binary PGM (P5) and PPM (P6) reading, PGM writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::image::{BinaryMask, GrayImage};

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::ImageFormat {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads the next ASCII integer token, skipping whitespace and `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<usize> {
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

/// Loads a binary PGM (P5) or PPM (P6) with maxval 255. PPM pixels are
/// converted with luma weights 0.299 R + 0.587 G + 0.114 B.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 2 {
        return Err(format_err(path, "file too short for a netpbm header"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(format_err(path, "bad magic bytes (expected P5 or P6)")),
    };
    let mut pos = 2;
    let width = next_token(&bytes, &mut pos)
        .ok_or_else(|| format_err(path, "missing width in header"))?;
    let height = next_token(&bytes, &mut pos)
        .ok_or_else(|| format_err(path, "missing height in header"))?;
    let maxval = next_token(&bytes, &mut pos)
        .ok_or_else(|| format_err(path, "missing maxval in header"))?;
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimensions"));
    }
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval} (need 255)")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing separator after header"));
    }
    pos += 1;

    let needed = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err(format_err(
            path,
            format!("truncated payload: need {needed} bytes, have {}", payload.len()),
        ));
    }
    let pixels = if channels == 1 {
        payload[..needed].iter().map(|&b| b as f32 / 255.0).collect()
    } else {
        payload[..needed]
            .chunks_exact(3)
            .map(|rgb| {
                let luma =
                    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
                (luma / 255.0) as f32
            })
            .collect()
    };
    GrayImage::new(width, height, pixels)
}

/// Writes a binary PGM with maxval 255 and the canonical header
/// `P5\n<w> <h>\n255\n`; pixels are `round(p * 255)`.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(32 + img.pixels().len());
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend(
        img.pixels()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, out).map_err(io_err(path))
}

/// Loads a mask stored as a PGM: bytes above 127 count as 1.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_image(path)?;
    Ok(BinaryMask::from_image(&img))
}

/// Writes a mask as a black/white PGM (1 -> 255).
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_image(&mask.to_image(), path)
}
