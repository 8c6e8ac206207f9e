//! Middlebury `.flo`: `f32` tag 202021.25 (`b"PIEH"`), `i32` width, `i32`
//! height, then interleaved `(u1, u2)` `f32` pairs in row-major order. All
//! little-endian.

use std::path::Path;

use super::{read_bytes, write_bytes, FormatError};
use crate::error::Result;
use crate::tvl1::FlowField;

pub const FLO_TAG: f32 = 202021.25;
const HEADER: usize = 12;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(HEADER + 8 * n);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (a, b) in flow.u1.iter().zip(&flow.u2) {
        out.extend_from_slice(&(*a as f32).to_le_bytes());
        out.extend_from_slice(&(*b as f32).to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, FormatError> {
    if bytes.len() < HEADER {
        return Err(FormatError::new(
            bytes.len(),
            format!("header truncated: expected {HEADER} bytes, found {}", bytes.len()),
        ));
    }
    let word = |at: usize| [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]];
    let tag = f32::from_le_bytes(word(0));
    if tag != FLO_TAG {
        return Err(FormatError::new(0, format!("bad tag {tag}, expected {FLO_TAG}")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(FormatError::new(4, format!("invalid dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = HEADER + 8 * w * h;
    if bytes.len() != need {
        return Err(FormatError::new(
            bytes.len().min(need),
            format!("expected {need} bytes for {w}x{h}, found {}", bytes.len()),
        ));
    }
    let mut u1 = Vec::with_capacity(w * h);
    let mut u2 = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let at = HEADER + 8 * i;
        u1.push(f32::from_le_bytes(word(at)) as f64);
        u2.push(f32::from_le_bytes(word(at + 4)) as f64);
    }
    FlowField::new(w, h, u1, u2).map_err(|e| FormatError::new(HEADER, e.to_string()))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    decode_flo(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flo(flow))
}
