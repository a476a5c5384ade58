//! `PAF1` binary matrix files.
//!
//! Layout: the four ASCII bytes `PAF1`, then `rows` and `cols` as
//! little-endian `u32`, then `rows * cols` little-endian `f32` values in
//! row-major order. Nothing else: no padding, no trailer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"PAF1";
const HEADER_LEN: usize = 12;

pub fn encode(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::Format(format!("{} rows exceed u32", m.rows())))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| Error::Format(format!("{} cols exceed u32", m.cols())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("{v} does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected PAF1".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("{rows}x{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{rows}x{cols} payload needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn write<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    let bytes = encode(m)?;
    w.write_all(&bytes)
        .map_err(|e| Error::io("<writer>", e))
}

pub fn read<R: Read>(mut r: R) -> Result<Matrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

pub fn save(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_byte_layout() {
        let m = Matrix::from_rows(&[[1.0, -2.5]]).unwrap();
        let bytes = encode(&m).unwrap();
        let mut expected = b"PAF1".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode(b"PAF").is_err());
        assert!(decode(b"XXXX\x00\x00\x00\x00\x00\x00\x00\x00").is_err());
        let mut bytes = encode(&Matrix::zeros(2, 2)).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut nan = encode(&Matrix::zeros(1, 1)).unwrap();
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&nan), Err(Error::NonFinite(_))));
    }

    proptest! {
        #[test]
        fn f32_values_round_trip_bit_exactly(
            rows in 0usize..5,
            cols in 1usize..5,
            seed in prop::collection::vec(-1.0e6f32..1.0e6, 25),
        ) {
            let data: Vec<f64> = seed.iter().take(rows * cols).map(|&v| v as f64).collect();
            let m = Matrix::new(rows, cols, data).unwrap();
            let bytes = encode(&m).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
