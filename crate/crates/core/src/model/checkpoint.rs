//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TFF1"
//! u32 config length, config text (`key = value` lines)
//! u32 record count
//! per record: u32 name length, name (UTF-8), u32 ndim, ndim × u64 extents,
//!             product(extents) × f64 values
//! ```
//!
//! Records cover every parameter plus two per batch-norm layer
//! (`<name>.mean`, `<name>.var`) holding the running statistics.

use std::collections::HashMap;
use std::path::Path;

use super::{ModelConfig, ModelError, TfFormerModel};
use crate::tensor::BnStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFF1";

type Result<T> = std::result::Result<T, ModelError>;

struct Record {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a model to bytes.
pub fn encode(model: &TfFormerModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let cfg = model.config.to_text();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    let bn = model.store.bn_buffers();
    put_u32(&mut out, model.store.params().len() + 2 * bn.len());
    for p in model.store.params() {
        put_record(&mut out, &p.name, p.value.shape(), p.value.data());
    }
    for (name, stats) in &bn {
        put_record(&mut out, &format!("{name}.mean"), &[stats.mean.len()], &stats.mean);
        put_record(&mut out, &format!("{name}.var"), &[stats.var.len()], &stats.var);
    }
    out
}

pub fn save_checkpoint(model: &TfFormerModel, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, encode(model))?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ModelError::Corrupt(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| ModelError::Corrupt(format!("{what} is not UTF-8")))
    }
}

fn decode(buf: &[u8]) -> Result<(ModelConfig, HashMap<String, Record>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::Corrupt("bad magic bytes (expected TFF1)".into()));
    }
    let cfg_len = r.u32("config length")?;
    let cfg = ModelConfig::from_text(&r.text(cfg_len, "config")?)?;
    let count = r.u32("record count")?;
    let mut records = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("record name length")?;
        let name = r.text(name_len, "record name")?;
        let ndim = r.u32("record rank")?;
        let shape = (0..ndim)
            .map(|_| r.u64("record extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| ModelError::Corrupt(format!("record {name} has absurd shape {shape:?}")))?;
        let bytes = r.take(n * 8, &format!("values of {name}"))?;
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if records.insert(name.clone(), Record { shape, values }).is_some() {
            return Err(ModelError::Corrupt(format!("duplicate record {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(ModelError::Corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok((cfg, records))
}

impl TfFormerModel {
    /// Overwrites all weights and running statistics from checkpoint bytes.
    /// The stored config must equal this model's config.
    pub fn load_bytes(&mut self, buf: &[u8]) -> Result<()> {
        let (cfg, mut records) = decode(buf)?;
        let diff = self.config.diff(&cfg);
        if !diff.is_empty() {
            return Err(ModelError::ConfigMismatch(diff));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let rec = records.remove(name).ok_or_else(|| ModelError::Corrupt(format!("missing record {name}")))?;
            if rec.shape != shape {
                return Err(ModelError::Corrupt(format!(
                    "record {name} has shape {:?}, expected {shape:?}",
                    rec.shape
                )));
            }
            Ok(rec.values)
        };
        let mut fresh = Vec::with_capacity(self.store.params().len());
        for p in self.store.params() {
            fresh.push(take(&p.name, p.value.shape())?);
        }
        let mut stats = Vec::new();
        for (name, s) in self.store.bn_buffers() {
            let c = s.mean.len();
            stats.push((name.clone(), BnStats {
                mean: take(&format!("{name}.mean"), &[c])?,
                var: take(&format!("{name}.var"), &[c])?,
            }));
        }
        if let Some(extra) = records.keys().min() {
            return Err(ModelError::Corrupt(format!("unexpected record {extra}")));
        }
        for (p, data) in self.store.params_mut().iter_mut().zip(fresh) {
            p.set_data(data);
        }
        for (name, s) in stats {
            self.store.set_bn(&name, s);
        }
        Ok(())
    }

    /// Like [`TfFormerModel::load_bytes`], reading from a file.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.load_bytes(&std::fs::read(path)?)
    }
}

/// Reconstructs a model from a checkpoint, taking the architecture from the
/// stored config.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TfFormerModel> {
    let buf = std::fs::read(path)?;
    let (cfg, _) = decode(&buf)?;
    let mut model = TfFormerModel::new(cfg, 0)?;
    model.load_bytes(&buf)?;
    Ok(model)
}
