use std::path::Path;

use super::{read_bytes, write_bytes, FormatError};
use crate::error::Result;
use crate::tvl1::GrayImage;

/// Decode a binary (`P5`) PGM into intensities scaled to `[0, 1]`.
/// 16-bit samples are big-endian per the netpbm convention.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, FormatError> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<(usize, String), FormatError> {
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
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(FormatError::new(start, "unexpected end of header"));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };

    let (_, magic) = token(&mut pos)?;
    if magic != "P5" {
        return Err(FormatError::new(0, format!("expected magic P5, found `{magic}`")));
    }
    let number = |pos: &mut usize, what: &str| -> Result<usize, FormatError> {
        let (at, t) = token(pos)?;
        t.parse::<usize>()
            .map_err(|_| FormatError::new(at, format!("bad {what} `{t}`")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(FormatError::new(pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::new(pos, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(FormatError::new(
            pos + raster.len(),
            format!("raster truncated: expected {need} bytes, found {}", raster.len()),
        ));
    }
    let maxval = maxval as f64;
    let data = if bps == 1 {
        raster[..need].iter().map(|&b| b as f64 / maxval).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval)
            .collect()
    };
    GrayImage::new(width, height, data).map_err(|e| FormatError::new(pos, e.to_string()))
}

/// Encode as 8-bit `P5`, clamping intensities to `[0, 1]`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm(img))
}
