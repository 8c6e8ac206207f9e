//! `EMB1` matrices: magic `b"EMB1"`, `u32` rows, `u32` cols (little-endian),
//! then row-major little-endian `f64`.

use std::path::Path;

use super::{read_bytes, write_bytes, FormatError};
use crate::error::Result;
use crate::matrix::Matrix;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const HEADER: usize = 12;

pub fn encode_emb1(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * m.as_slice().len());
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_emb1(bytes: &[u8]) -> Result<Matrix, FormatError> {
    if bytes.len() < HEADER {
        return Err(FormatError::new(
            bytes.len(),
            format!("header truncated: expected {HEADER} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != EMB1_MAGIC {
        return Err(FormatError::new(0, format!("bad magic {:?}, expected \"EMB1\"", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = HEADER + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(FormatError::new(
            bytes.len().min(expected),
            format!(
                "length mismatch for {rows}x{cols}: expected {expected} bytes, actual {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| FormatError::new(HEADER, e.to_string()))
}

pub fn read_emb1(path: &Path) -> Result<Matrix> {
    decode_emb1(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_emb1(path: &Path, m: &Matrix) -> Result<()> {
    write_bytes(path, &encode_emb1(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_names_lengths() {
        let bytes = encode_emb1(&Matrix::zeros(3, 2));
        let e = decode_emb1(&bytes[..40]).unwrap_err();
        assert!(e.reason.contains("expected 60"), "{}", e.reason);
        assert!(e.reason.contains("actual 40"), "{}", e.reason);
        assert_eq!(e.offset, 40);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_emb1(&Matrix::zeros(1, 1));
        bytes[3] = b'2';
        assert_eq!(decode_emb1(&bytes).unwrap_err().offset, 0);
    }
}
