//! Native trace container.
//!
//! Layout, little-endian: `"SCAT"`, `u16` version, `u16` flags (bit 0 keys,
//! bit 1 labels), `u64` trace count, `u32` trace length, `u8` dtype
//! (1 f32, 2 i8, 3 i16), `u8` target byte, six zero bytes. The payload
//! follows: samples row-major, plaintexts, then keys and labels when flagged.

use std::path::Path;

use scaforge_core::aes::ByteIndex;
use scaforge_core::traces::{SampleType, TraceSet};
use scaforge_core::Matrix;

use crate::error::{read_file, write_file, Error, FormatError};
use crate::le::{Reader, WriteLe};

pub const MAGIC: &[u8; 4] = b"SCAT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

const FLAG_KEYS: u16 = 1;
const FLAG_LABELS: u16 = 2;

pub fn dtype_code(dtype: SampleType) -> u8 {
    match dtype {
        SampleType::F32 => 1,
        SampleType::I8 => 2,
        SampleType::I16 => 3,
    }
}

pub fn dtype_from_code(code: u8) -> Result<SampleType, FormatError> {
    match code {
        1 => Ok(SampleType::F32),
        2 => Ok(SampleType::I8),
        3 => Ok(SampleType::I16),
        other => Err(FormatError::Dtype(other)),
    }
}

/// Encodes with the set's own source dtype.
pub fn encode(set: &TraceSet) -> Result<Vec<u8>, FormatError> {
    encode_as(set, set.source_dtype())
}

/// Encodes the samples as `dtype`. Fails rather than rounding when a value
/// does not survive the narrowing exactly.
pub fn encode_as(set: &TraceSet, dtype: SampleType) -> Result<Vec<u8>, FormatError> {
    let n = set.n_traces();
    let l = set.trace_len();
    let mut flags = 0;
    if set.keys().is_some() {
        flags |= FLAG_KEYS;
    }
    if set.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n * (l * dtype.size() + 33));
    out.extend_from_slice(MAGIC);
    out.put_u16(VERSION);
    out.put_u16(flags);
    out.put_u64(n as u64);
    out.put_u32(u32::try_from(l).map_err(|_| FormatError::Corrupt("trace length exceeds u32"))?);
    out.put_u8(dtype_code(dtype));
    out.put_u8(set.byte_index().get() as u8);
    out.extend_from_slice(&[0; 6]);

    for (index, &value) in set.samples().as_slice().iter().enumerate() {
        let bad = || FormatError::Unrepresentable { index, value, dtype };
        match dtype {
            SampleType::F32 => {
                let v = value as f32;
                if f64::from(v) != value {
                    return Err(bad());
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
            SampleType::I8 => {
                if value.fract() != 0.0 || !(-128.0..=127.0).contains(&value) {
                    return Err(bad());
                }
                out.push(value as i8 as u8);
            }
            SampleType::I16 => {
                if value.fract() != 0.0 || !(-32768.0..=32767.0).contains(&value) {
                    return Err(bad());
                }
                out.extend_from_slice(&(value as i16).to_le_bytes());
            }
        }
    }
    for pt in set.plaintexts() {
        out.extend_from_slice(pt);
    }
    if let Some(keys) = set.keys() {
        for k in keys {
            out.extend_from_slice(k);
        }
    }
    if let Some(labels) = set.labels() {
        out.extend_from_slice(labels);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TraceSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let flags = r.u16()?;
    if flags & !(FLAG_KEYS | FLAG_LABELS) != 0 {
        return Err(FormatError::Flags(flags));
    }
    let n = usize::try_from(r.u64()?).map_err(|_| FormatError::Corrupt("trace count exceeds address space"))?;
    let l = r.u32()? as usize;
    let dtype = dtype_from_code(r.u8()?)?;
    let byte_index = ByteIndex::new(r.u8()? as usize)?;
    if r.take(6)?.iter().any(|&b| b != 0) {
        return Err(FormatError::Reserved);
    }

    let n_samples = n.checked_mul(l).ok_or(FormatError::Corrupt("sample count overflows"))?;
    let raw = r.take(n_samples.checked_mul(dtype.size()).ok_or(FormatError::Corrupt("sample count overflows"))?)?;
    let data: Vec<f64> = match dtype {
        SampleType::F32 => raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect(),
        SampleType::I8 => raw.iter().map(|&b| f64::from(b as i8)).collect(),
        SampleType::I16 => raw.chunks_exact(2).map(|c| f64::from(i16::from_le_bytes(c.try_into().unwrap()))).collect(),
    };
    let blocks = |r: &mut Reader| -> Result<Vec<[u8; 16]>, FormatError> {
        let raw = r.take(n.checked_mul(16).ok_or(FormatError::Corrupt("trace count overflows"))?)?;
        Ok(raw.chunks_exact(16).map(|c| c.try_into().unwrap()).collect())
    };
    let plaintexts = blocks(&mut r)?;
    let keys = if flags & FLAG_KEYS != 0 { Some(blocks(&mut r)?) } else { None };
    let labels = if flags & FLAG_LABELS != 0 { Some(r.take(n)?.to_vec()) } else { None };
    r.finish()?;

    let samples = Matrix::from_vec(n, l, data)?;
    Ok(TraceSet::new(samples, plaintexts, keys, labels, byte_index, dtype)?)
}

pub fn save_native(path: &Path, set: &TraceSet) -> Result<(), Error> {
    let bytes = encode(set).map_err(|e| Error::format(path, e))?;
    write_file(path, &bytes)
}

pub fn load_native(path: &Path) -> Result<TraceSet, Error> {
    decode(&read_file(path)?).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dtype: SampleType, values: Vec<f64>) -> TraceSet {
        let pts = vec![[1u8; 16], [2u8; 16]];
        let keys = vec![[7u8; 16]; 2];
        let labels = pts.iter().map(|p| scaforge_core::aes::sbox_label(p[2], 7)).collect();
        let samples = Matrix::from_vec(2, values.len() / 2, values).unwrap();
        TraceSet::new(samples, pts, Some(keys), Some(labels), ByteIndex::default(), dtype).unwrap()
    }

    #[test]
    fn header_is_28_bytes() {
        let set = tiny(SampleType::I8, vec![1.0, -2.0, 3.0, -128.0]);
        let bytes = encode(&set).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4 + 32 + 32 + 2);
        assert_eq!(&bytes[..4], b"SCAT");
        assert_eq!(bytes[20], 2);
        assert_eq!(bytes[21], 2);
    }

    #[test]
    fn each_dtype_round_trips() {
        for (dtype, vals) in [
            (SampleType::F32, vec![0.5, -1.25, 3.0e7, 1.0e-3f32 as f64]),
            (SampleType::I8, vec![-128.0, 127.0, 0.0, -1.0]),
            (SampleType::I16, vec![-32768.0, 32767.0, 300.0, -1.0]),
        ] {
            let set = tiny(dtype, vals);
            assert_eq!(decode(&encode(&set).unwrap()).unwrap(), set);
        }
    }

    #[test]
    fn narrowing_is_refused() {
        let set = tiny(SampleType::F32, vec![0.1, 0.0, 0.0, 0.0]);
        assert!(matches!(encode(&set), Err(FormatError::Unrepresentable { index: 0, .. })));
        let set = tiny(SampleType::I16, vec![0.0, 40000.0, 0.0, 0.0]);
        assert!(matches!(encode(&set), Err(FormatError::Unrepresentable { index: 1, .. })));
        let set = tiny(SampleType::I8, vec![0.0, 0.0, 0.5, 0.0]);
        assert!(matches!(encode_as(&set, SampleType::I8), Err(FormatError::Unrepresentable { index: 2, .. })));
    }

    #[test]
    fn header_faults_are_distinguished() {
        let good = encode(&tiny(SampleType::I8, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let patched = |at: usize, v: u8| {
            let mut b = good.clone();
            b[at] = v;
            decode(&b)
        };
        assert!(matches!(patched(0, b'X'), Err(FormatError::BadMagic { .. })));
        assert!(matches!(patched(4, 2), Err(FormatError::Version(2))));
        assert!(matches!(patched(6, 7), Err(FormatError::Flags(7))));
        assert!(matches!(patched(20, 9), Err(FormatError::Dtype(9))));
        assert!(matches!(patched(21, 16), Err(FormatError::Core(scaforge_core::Error::ByteIndex(16)))));
        assert!(matches!(patched(25, 1), Err(FormatError::Reserved)));
        assert!(matches!(decode(&good[..good.len() - 1]), Err(FormatError::Truncated { needed: 1, .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(FormatError::Trailing(1))));
    }

    #[test]
    fn wrong_label_is_rejected() {
        let mut b = encode(&tiny(SampleType::I8, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let last = b.len() - 1;
        b[last] ^= 1;
        assert!(matches!(decode(&b), Err(FormatError::Core(scaforge_core::Error::LabelMismatch(1)))));
    }
}
