//! Flat tensor container.
//!
//! ```text
//! u8        version (= 1)
//! u32       entry count
//! entry*    u32 name length, name (UTF-8),
//!           u8 dtype length, dtype (always "f64"),
//!           u32 rank, rank x u64 dims
//! payload*  little-endian f64 values, one block per entry in header order
//! ```
//!
//! All integers are little-endian. Trailing bytes are rejected.

use std::path::Path;

use thiserror::Error;

use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const VERSION: u8 = 1;
const DTYPE: &str = "f64";
const MAX_RANK: u32 = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unexpected end of data at byte {0}")]
    Truncated(usize),
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("unsupported dtype `{0}`")]
    Dtype(String),
    #[error("entry name is not valid UTF-8")]
    Name,
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
    #[error("entry `{name}` has rank {rank} (max {MAX_RANK})")]
    Rank { name: String, rank: u32 },
    #[error("entry `{0}` is too large")]
    Size(String),
    #[error("entry `{0}` holds a non-finite value")]
    NonFinite(String),
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = vec![VERSION];
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE.len() as u8);
        out.extend_from_slice(DTYPE.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u8()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut header: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut payload_bytes: usize = 0;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Name)?
            .to_string();
        let dtype_len = r.u8()? as usize;
        let dtype = String::from_utf8_lossy(r.take(dtype_len)?).into_owned();
        if dtype != DTYPE {
            return Err(CheckpointError::Dtype(dtype));
        }
        let rank = r.u32()?;
        if rank > MAX_RANK {
            return Err(CheckpointError::Rank { name, rank });
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Size(name.clone()))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| CheckpointError::Size(name.clone()))?;
            shape.push(d);
        }
        payload_bytes = numel
            .checked_mul(8)
            .and_then(|b| payload_bytes.checked_add(b))
            .ok_or_else(|| CheckpointError::Size(name.clone()))?;
        if header.iter().any(|(n, _, _)| *n == name) {
            return Err(CheckpointError::Duplicate(name));
        }
        header.push((name, shape, numel));
    }
    if payload_bytes > r.remaining() {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let mut params = ParamSet::new();
    for (name, shape, numel) in header {
        let data: Vec<f64> = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(name));
        }
        let t = Tensor::new(shape, data).expect("numel matches shape");
        params.insert(name, t);
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::Trailing(r.remaining()));
    }
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &ParamSet) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(
            "phi.fc.w",
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -7.25]).unwrap(),
        );
        p.insert("film.gamma", Tensor::vector(vec![1.0, 1.0]));
        p.insert("scale", Tensor::scalar(0.5));
        p
    }

    #[test]
    fn layout_starts_with_version_and_count() {
        let bytes = encode(&sample());
        assert_eq!(bytes[0], VERSION);
        assert_eq!(u32::from_le_bytes(bytes[1..5].try_into().unwrap()), 3);
        // first entry in name order is film.gamma
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 10);
        assert_eq!(&bytes[9..19], b"film.gamma");
        assert_eq!(bytes[19], 3);
        assert_eq!(&bytes[20..23], b"f64");
    }

    #[test]
    fn decode_inverts_encode() {
        let p = sample();
        assert_eq!(decode(&encode(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(CheckpointError::Trailing(1))));
        let mut v = bytes.clone();
        v[0] = 9;
        assert!(matches!(decode(&v), Err(CheckpointError::Version(9))));
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn rejects_absurd_dimensions_without_allocating() {
        let mut bytes = vec![VERSION];
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'x');
        bytes.push(3);
        bytes.extend_from_slice(b"f64");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
