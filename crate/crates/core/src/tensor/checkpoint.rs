//! Binary parameter checkpoints.
//!
//! Layout: magic `BTCK`, endianness byte (`L`), version u32, parameter
//! count u64; then per parameter: name length u32, UTF-8 name, rank u32,
//! dims u64 each, row-major f64 data. All integers and floats little-endian
//! as the header byte declares.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::Result;

use super::Tensor;

const MAGIC: &[u8; 4] = b"BTCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: impl AsRef<Path>, params: &[(String, &Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(b'L');
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: String,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                &self.origin,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let origin = path.display().to_string();
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        origin: origin.clone(),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::format(&origin, "not a checkpoint file (bad magic)"));
    }
    if r.take(1)? != b"L" {
        return Err(Error::format(&origin, "unsupported endianness marker"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(&origin, format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format(&origin, "parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(&origin, "trailing bytes after last parameter"));
    }
    Ok(out)
}
