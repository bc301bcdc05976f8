//! Binary checkpoint format for named parameter arrays.
//!
//! ```text
//! magic   8 bytes  "L2RCKPT1"
//! count   u32 LE   number of arrays
//! per array:
//!   name_len u16 LE
//!   name     UTF-8 bytes
//!   rank     u8
//!   dims     rank x u32 LE
//!   data     product(dims) x f32 LE
//! ```
//!
//! No padding, no trailing bytes. Loads are strict: any structural problem
//! is a `Checkpoint` error rather than a silent truncation.

use super::scalar::Scalar;
use super::ParamArray;
use crate::error::CoreError;
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"L2RCKPT1";

pub fn save_arrays<S: Scalar>(arrays: &[ParamArray<S>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for arr in arrays {
        let name = arr.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(arr.dims.len() as u8);
        for &d in &arr.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &arr.data {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_arrays(bytes: &[u8]) -> Result<Vec<ParamArray<f32>>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CoreError::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            n = n
                .checked_mul(d)
                .ok_or_else(|| CoreError::Checkpoint(format!("{name}: dims overflow")))?;
            dims.push(d);
        }
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(ParamArray { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(CoreError::Checkpoint(format!(
            "{} trailing bytes after last array",
            bytes.len() - r.pos
        )));
    }
    Ok(arrays)
}
