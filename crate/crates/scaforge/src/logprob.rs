//! Log-probability matrix file: `"SCLP"`, `u16` version, `u64` rows,
//! `u16` class count (256), then row-major little-endian `f64`.

use std::path::Path;

use scaforge_core::{LogProbMatrix, Matrix, N_CLASSES};

use crate::error::{read_file, write_file, Error, FormatError};
use crate::le::{Reader, WriteLe};

pub const MAGIC: &[u8; 4] = b"SCLP";
pub const VERSION: u16 = 1;

pub fn encode(probs: &LogProbMatrix) -> Vec<u8> {
    let m = probs.as_matrix();
    let mut out = Vec::with_capacity(16 + m.as_slice().len() * 8);
    out.extend_from_slice(MAGIC);
    out.put_u16(VERSION);
    out.put_u64(m.rows() as u64);
    out.put_u16(N_CLASSES as u16);
    for &v in m.as_slice() {
        out.put_f64(v);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<LogProbMatrix, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let rows = usize::try_from(r.u64()?).map_err(|_| FormatError::Corrupt("row count exceeds address space"))?;
    let classes = r.u16()?;
    if classes as usize != N_CLASSES {
        return Err(FormatError::ClassCount(classes));
    }
    let data = r.f64_vec(rows.checked_mul(N_CLASSES).ok_or(FormatError::Corrupt("row count overflows"))?)?;
    r.finish()?;
    Ok(LogProbMatrix::new(Matrix::from_vec(rows, N_CLASSES, data)?)?)
}

pub fn save(path: &Path, probs: &LogProbMatrix) -> Result<(), Error> {
    write_file(path, &encode(probs))
}

pub fn load(path: &Path) -> Result<LogProbMatrix, Error> {
    decode(&read_file(path)?).map_err(|e| Error::format(path, e))
}
