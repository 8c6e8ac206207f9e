//! File formats: binary PGM frames, Middlebury `.flo` flow, `EMB1` matrices,
//! CSV prediction matrices and key=value configs.

pub mod config;
pub mod emb1;
pub mod flo;
pub mod pgm;
pub mod preds;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Decoding failure inside an in-memory buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub offset: usize,
    pub reason: String,
}

impl FormatError {
    pub(crate) fn new(offset: usize, reason: impl Into<String>) -> Self {
        Self {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn at(self, path: &Path) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            offset: self.offset,
            reason: self.reason,
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
