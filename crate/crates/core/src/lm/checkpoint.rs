//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! b"MMR1"  u32 version  u64 vocabulary fingerprint
//! u32 vocab_size  u32 n_layers  u32 n_heads  u32 d_model  u32 d_ff  u32 max_len
//! u32 n_tensors, then per tensor: u32 name_len, name bytes, u64 element count
//! f64 parameters, tensors in table order
//! ```

use std::path::Path;

use super::{DifferentiableLM, TinyTransformerLM, TransformerConfig};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMR1";
const VERSION: u32 = 1;

pub fn save_transformer(path: &Path, lm: &TinyTransformerLM, vocab: &Vocabulary) -> Result<()> {
    let c = lm.config();
    if c.vocab_size != vocab.size() {
        return Err(Error::Checkpoint("model and vocabulary sizes differ".into()));
    }
    let mut out = Vec::with_capacity(64 + lm.params().len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&vocab.fingerprint().to_le_bytes());
    for v in [c.vocab_size, c.n_layers, c.n_heads, c.d_model, c.d_ff, c.max_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let shapes = lm.tensor_shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (name, n) in &shapes {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(*n as u64).to_le_bytes());
    }
    for p in lm.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_transformer(path: &Path, vocab: &Vocabulary) -> Result<TinyTransformerLM> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if r.u64()? != vocab.fingerprint() {
        return Err(Error::Checkpoint("vocabulary fingerprint mismatch".into()));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = TransformerConfig {
        vocab_size: dims[0],
        n_layers: dims[1],
        n_heads: dims[2],
        d_model: dims[3],
        d_ff: dims[4],
        max_len: dims[5],
    };
    if config.vocab_size != vocab.size() {
        return Err(Error::Checkpoint("model and vocabulary sizes differ".into()));
    }
    let n_tensors = r.u32()? as usize;
    let mut table = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        table.push((name, r.u64()? as usize));
    }
    let total: usize = table.iter().map(|(_, n)| n).sum();
    let params: Vec<f64> = r
        .take(total * 8)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if r.at != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let lm = TinyTransformerLM::from_params(config, params)?;
    if lm.tensor_shapes() != table {
        return Err(Error::Checkpoint("tensor table does not match the architecture".into()));
    }
    Ok(lm)
}
