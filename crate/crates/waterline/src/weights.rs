//! Binary weight checkpoint format (little-endian).
//!
//! Layout: magic "WLDN", format version u32, spec fingerprint u64, then a
//! payload region of: layer count u32, and per layer a name (u16 length +
//! UTF-8 bytes), rank u8, extents u32 each, and the tensor data as f64 IEEE
//! values. The file ends with a CRC-32 of the payload region.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::ParamNet;
use crate::tensor::Tensor;
use crate::util::crc32;

const MAGIC: &[u8; 4] = b"WLDN";
const VERSION: u32 = 1;

pub fn save_weights(net: &dyn ParamNet, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(net))?;
    Ok(())
}

pub fn encode_weights(net: &dyn ParamNet) -> Vec<u8> {
    let params = net.named_params();
    let mut payload = Vec::new();
    payload.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in &params {
        payload.extend_from_slice(&(name.len() as u16).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.push(tensor.rank() as u8);
        for &e in tensor.shape() {
            payload.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(16 + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.spec_fingerprint().to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32(&payload).to_le_bytes());
    out
}

pub fn load_weights(net: &mut dyn ParamNet, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    decode_weights(net, &bytes)
}

pub fn decode_weights(net: &mut dyn ParamNet, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"WLDN\"")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported weight format version {version} (expected {VERSION})"
        )));
    }
    let fingerprint = r.u64()?;
    let expected = net.spec_fingerprint();
    if fingerprint != expected {
        return Err(Error::Format(format!(
            "spec fingerprint mismatch: file {fingerprint:#018x}, expected {expected:#018x}"
        )));
    }
    if bytes.len() < r.pos + 4 {
        return Err(Error::Format("truncated payload".to_string()));
    }
    let payload = &bytes[r.pos..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual_crc = crc32(payload);
    if stored_crc != actual_crc {
        return Err(Error::Format(format!(
            "payload CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let mut params = net.named_params_mut();
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::Format(format!(
            "layer count mismatch: file has {count}, spec expects {}",
            params.len()
        )));
    }
    for (name, tensor) in params.iter_mut() {
        let name_len = r.u16()? as usize;
        let stored_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("non-UTF-8 layer name".to_string()))?;
        if stored_name != name {
            return Err(Error::Format(format!(
                "shape-table mismatch: file layer \"{stored_name}\" vs spec layer \"{name}\""
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != tensor.shape() {
            return Err(Error::Format(format!(
                "shape-table mismatch on \"{name}\": file {shape:?} vs spec {:?}",
                tensor.shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        **tensor = Tensor::new(shape, data)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated payload".to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
