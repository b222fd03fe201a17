//! BDLR binary format, version 1.
//!
//! Little-endian throughout: the 8-byte magic `BDLRMAT1`, three `u64`
//! values `n`, `n_B`, `R`, then `f64` arrays `B0` (row-major), `D0`,
//! `P` (column-major) and `Q` (column-major). No padding.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::BdlrMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BDLRMAT1";
const HEADER_LEN: usize = 8 + 3 * 8;

pub fn write_bdlr(m: &BdlrMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(m))?;
    Ok(())
}

pub fn read_bdlr(path: impl AsRef<Path>) -> Result<BdlrMatrix> {
    from_bytes(&fs::read(path)?)
}

pub fn to_bytes(m: &BdlrMatrix) -> Vec<u8> {
    let (n, nb, r) = (m.n(), m.n_b(), m.rank());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (nb * nb + (n - nb) + 2 * n * r));
    out.extend_from_slice(MAGIC);
    for v in [n, nb, r] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    // nalgebra stores column-major; B0 is written row by row.
    for i in 0..nb {
        for j in 0..nb {
            out.extend_from_slice(&m.b0()[(i, j)].to_le_bytes());
        }
    }
    let columns = m.d0().iter().chain(m.p().iter()).chain(m.q().iter());
    for v in columns {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<BdlrMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file holds {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic, expected BDLRMAT1".into()));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    let (n, nb, r) = (word(0), word(1), word(2));
    if nb > n {
        return Err(Error::Dimension(format!("header has n_B = {nb} > n = {n}")));
    }
    if r > n {
        return Err(Error::Dimension(format!("header has R = {r} > n = {n}")));
    }
    if n == 0 {
        return Err(Error::Dimension("header has n = 0".into()));
    }
    let count = nb
        .checked_mul(nb)
        .and_then(|b| n.checked_mul(r)?.checked_mul(2)?.checked_add(b))
        .and_then(|c| c.checked_add(n - nb))
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if (payload.len() as u64) < count {
        return Err(Error::Format(format!(
            "truncated payload: {} bytes present, {count} expected",
            payload.len()
        )));
    }
    if payload.len() as u64 > count {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() as u64 - count
        )));
    }
    let (n, nb, r) = (n as usize, nb as usize, r as usize);
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
    let b0 = DMatrix::from_row_slice(nb, nb, &take(nb * nb));
    let d0 = DVector::from_vec(take(n - nb));
    let p = DMatrix::from_vec(n, r, take(n * r));
    let q = DMatrix::from_vec(n, r, take(n * r));
    BdlrMatrix::new(b0, d0, p, q).map_err(|e| match e {
        Error::InvalidParameter(msg) => Error::Format(msg),
        other => other,
    })
}
