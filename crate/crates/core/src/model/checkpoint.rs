//! Binary checkpoint format.
//!
//! ```text
//! "VSTA"                       magic
//! u32  version                 (1)
//! u32  vocab_size, d_model, n_layers, n_heads,
//!      n_image_tokens, max_text_len, d_image_feat
//! u32  seed low word, u32 seed high word
//! u32  block count
//! per block:
//!   u16 name length, name bytes (UTF-8)
//!   u64 element count
//!   f64 values
//! ```
//!
//! Every integer and float is little-endian. Blocks appear in the canonical
//! parameter order and shapes are implied by the config.

use std::path::Path;

use super::{param_layout, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VSTA";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    config.validate()?;
    params.check_layout(config)?;
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        config.vocab_size,
        config.d_model,
        config.n_layers,
        config.n_heads,
        config.n_image_tokens,
        config.max_text_len,
        config.d_image_feat,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(config.seed as u32).to_le_bytes());
    out.extend_from_slice(&((config.seed >> 32) as u32).to_le_bytes());

    let layout = param_layout(config);
    out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    for (spec, t) in layout.iter().zip(params.ordered()) {
        let name = spec.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Parse(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let mut fields = [0usize; 7];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let lo = r.u32()? as u64;
    let hi = r.u32()? as u64;
    let config = ModelConfig {
        vocab_size: fields[0],
        d_model: fields[1],
        n_layers: fields[2],
        n_heads: fields[3],
        n_image_tokens: fields[4],
        max_text_len: fields[5],
        d_image_feat: fields[6],
        seed: lo | (hi << 32),
    };
    config.validate().map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;

    let layout = param_layout(&config);
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(Error::Mismatch(format!("checkpoint has {count} blocks, config implies {}", layout.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for spec in &layout {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Parse("parameter name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(Error::Mismatch(format!("expected block {}, found {name}", spec.name)));
        }
        let n = r.u64()? as usize;
        let expected: usize = spec.shape.iter().product();
        if n != expected {
            return Err(Error::Mismatch(format!("{name}: {n} values, config implies {expected}")));
        }
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Parse("block too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::new(spec.shape.clone(), data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((config.clone(), ModelParams::from_ordered(config.n_layers, tensors)?))
}

pub fn save(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    std::fs::write(path, to_bytes(config, params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    from_bytes(&std::fs::read(path)?)
}
