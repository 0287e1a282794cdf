//! `LSTMv1` container: magic, architecture, shape table, then every
//! parameter as a little-endian f64 in layout order.
//!
//! ```text
//! b"LSTMv1"
//! u32 input_dim, u32 hidden, u32 layers, u32 heads, f64 dropout
//! u32 n_tensors
//! n_tensors x { u32 name_len, name (utf-8), u32 ndim, ndim x u64 dim }
//! f64 x n_params
//! ```

use std::fs;
use std::path::Path;

use super::{LstmConfig, LstmModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"LSTMv1";

pub fn to_bytes(model: &LstmModel) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + 8 * model.n_params());
    out.extend_from_slice(MAGIC);
    for v in [cfg.input_dim, cfg.hidden, cfg.layers, cfg.heads] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout.to_le_bytes());
    out.extend_from_slice(&(model.layout().len() as u32).to_le_bytes());
    for t in model.layout() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::ModelFormat(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<LstmModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::ModelFormat("missing LSTMv1 magic".into()));
    }
    let cfg = LstmConfig {
        input_dim: r.u32("input_dim")?,
        hidden: r.u32("hidden")?,
        layers: r.u32("layers")?,
        heads: r.u32("heads")?,
        dropout: r.f64("dropout")?,
    };
    let template = LstmModel::zeros(cfg)?;
    let n = r.u32("tensor count")?;
    if n != template.layout().len() {
        return Err(Error::ModelFormat(format!(
            "{n} tensors stored, architecture needs {}",
            template.layout().len()
        )));
    }
    for spec in template.layout() {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::ModelFormat("tensor name is not utf-8".into()))?;
        let ndim = r.u32("rank")?;
        let shape = (0..ndim).map(|_| r.u64("dimension")).collect::<Result<Vec<_>>>()?;
        if name != spec.name || shape != spec.shape {
            return Err(Error::ModelFormat(format!(
                "tensor `{name}` {shape:?} where `{}` {:?} was expected",
                spec.name, spec.shape
            )));
        }
    }
    let params = (0..template.n_params())
        .map(|_| r.f64("parameters"))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after parameters",
            buf.len() - r.pos
        )));
    }
    LstmModel::from_params(cfg, params)
}

pub fn save(model: &LstmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<LstmModel> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LstmConfig {
        LstmConfig {
            hidden: 3,
            heads: 2,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = LstmModel::initialized(cfg(), 17).unwrap();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..6], b"LSTMv1");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lstm");
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&LstmModel::initialized(cfg(), 1).unwrap());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        // hidden 3 -> 4 changes every shape
        let mut resized = bytes;
        resized[10] = 4;
        assert!(matches!(from_bytes(&resized), Err(Error::ModelFormat(_))));
    }
}
