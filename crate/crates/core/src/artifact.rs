//! JSON artifacts with sorted keys and content hashes.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const ARTIFACT_VERSION: u32 = 1;

/// Serialize through `serde_json::Value`, whose maps are ordered, so keys
/// come out sorted and the text is stable across runs.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn matrix_hash(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in row_major(m) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::dim(format!(
            "expected {rows}x{cols} = {} entries, found {}",
            rows * cols,
            data.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, data);
    crate::numerics::ensure_finite(&m, "artifact matrix")?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn keys_are_sorted() {
        let mut m = HashMap::new();
        m.insert("zeta", 1);
        m.insert("alpha", 2);
        m.insert("mid", 3);
        let s = to_sorted_json(&m).unwrap();
        let a = s.find("alpha").unwrap();
        let b = s.find("mid").unwrap();
        let c = s.find("zeta").unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn row_major_round_trip() {
        let m = Matrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(row_major(&m), vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(from_row_major(2, 3, &row_major(&m)).unwrap(), m);
        assert!(from_row_major(2, 2, &[1.0]).is_err());
    }
}
