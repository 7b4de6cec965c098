//! Binary checkpoint format.
//!
//! Layout: `HMAN`, u16 version, u32 entry count, then per entry a u16 name
//! length, the UTF-8 name, a u8 dtype tag, a u8 rank and u32 dimensions.
//! Payloads follow in table order as row-major little-endian f32. All
//! integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::diffmath::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::hypergraph::NodeSpace;
use crate::model::params::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"HMAN";
pub const FORMAT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

pub fn encode_tensors(named: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(DTYPE_F32);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, t) in named {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = c.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = c.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!("unsupported dtype tag {dtype} for {name}")));
        }
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let names = params.names();
    let named: Vec<(String, &Tensor)> = names.into_iter().zip(params.tensors()).collect();
    let bytes = encode_tensors(&named)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig, nodes: &NodeSpace) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    ModelParams::from_named(config, nodes, decode_tensors(&bytes)?)
}

/// Rounds every parameter to the stored precision, so a save/load cycle is the identity.
pub fn round_to_storage(params: &mut ModelParams) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
}
