//! `.rgt` binary tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "RGT1"            4 bytes
//! ndims             u32
//! dims[ndims]       u32 each
//! data[prod(dims)]  f64 each, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RGT1";

pub fn write_rgt<W: Write>(tensor: &Tensor, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensor.ndims() as u32).to_le_bytes())?;
    for &d in tensor.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in tensor.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()
}

pub fn encode_rgt(tensor: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * tensor.ndims() + 8 * tensor.len());
    write_rgt(tensor, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode_rgt(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::RgtFormat {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"RGT1\""),
        });
    }
    let ndims = cursor.u32("ndims")? as usize;
    if ndims == 0 {
        return Err(Error::RgtFormat {
            offset: 4,
            message: "ndims must be at least 1".into(),
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let at = cursor.pos;
        let d = cursor.u32("dims")? as usize;
        if d == 0 {
            return Err(Error::RgtFormat {
                offset: at as u64,
                message: format!("dim {i} is zero"),
            });
        }
        dims.push(d);
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::RgtFormat {
            offset: 8,
            message: format!("shape {dims:?} is too large"),
        })?;
    let payload = cursor.take(numel * 8, "data")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if cursor.pos != bytes.len() {
        return Err(Error::RgtFormat {
            offset: cursor.pos as u64,
            message: format!("{} trailing bytes after payload", bytes.len() - cursor.pos),
        });
    }
    Tensor::from_vec(dims, data)
}

pub fn save_rgt(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rgt(tensor, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_rgt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_rgt(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::RgtFormat {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}
