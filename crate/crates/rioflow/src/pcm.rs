//! PCM file I/O: 16-bit little-endian signed mono samples.

use crate::diag::{Error, ErrorCode, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Reads a whole PCM file as raw 16-bit codes.
pub fn read_codes(path: &Path) -> Result<Vec<i16>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::fault(ErrorCode::Io, format!("cannot read {}: {}", path.display(), e)))?;
    Ok(bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
}

/// Reads a PCM file normalized to f64 in [-1, 1): `code / 32768`.
pub fn read_normalized(path: &Path) -> Result<Vec<f64>> {
    Ok(read_codes(path)?.into_iter().map(|c| c as f64 / 32768.0).collect())
}

pub fn write_codes(path: &Path, codes: &[i16]) -> Result<()> {
    let mut bytes = Vec::with_capacity(codes.len() * 2);
    for c in codes {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::fault(ErrorCode::Io, format!("cannot write {}: {}", path.display(), e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pcm");
        let codes = vec![0i16, 1, -1, i16::MAX, i16::MIN, 1234];
        write_codes(&path, &codes).unwrap();
        assert_eq!(read_codes(&path).unwrap(), codes);
        let norm = read_normalized(&path).unwrap();
        assert_eq!(norm[0], 0.0);
        assert!((norm[3] - 32767.0 / 32768.0).abs() < 1e-15);
    }
}
