//! Binary checkpoint format (little-endian throughout):
//!
//! ```text
//! magic    "DPEC"
//! version  u32            (= 1)
//! step     u64
//! config   u64 length + UTF-8 key=value lines
//! count    u64
//! entries  count × { u64 name length, UTF-8 name, u64 rank, rank × u64 dim,
//!                    f32 values }
//! ```
//!
//! Entries are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::parse_kv;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Transformer};

pub const MAGIC: &[u8; 4] = b"DPEC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// `key=value` lines describing the model (and usually the run).
    pub config: String,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn from_model(model: &Transformer<f32>, step: u64, extra_config: &str) -> Self {
        let mut config: String = model
            .config()
            .to_entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        config.push_str(extra_config);
        let tensors = model
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        Self { step, config, tensors }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_entries(&parse_kv(&self.config)?)
    }

    /// Rebuilds the model; every parameter must be present with the right
    /// shape and no extra tensors are allowed.
    pub fn to_model(&self) -> Result<Transformer<f32>> {
        let model = Transformer::from_named(self.model_config()?, |n| self.tensors.get(n).cloned())?;
        if model.params().len() != self.tensors.len() {
            return Err(Error::Input(format!(
                "checkpoint holds {} tensors, model has {} parameters",
                self.tensors.len(),
                model.params().len()
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Input("not a DPEC checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Input(format!("unsupported checkpoint version {version}")));
        }
        let step = r.u64()?;
        let clen = r.len()?;
        let config = String::from_utf8(r.take(clen)?.to_vec())
            .map_err(|_| Error::Input("checkpoint config is not UTF-8".into()))?;
        let count = r.u64()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.len()?;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Input("tensor name is not UTF-8".into()))?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Input("tensor size overflows".into()))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Input("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Input(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Input("trailing bytes after checkpoint".into()));
        }
        Ok(Self { step, config, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Input("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Input("length overflows usize".into()))
    }
}

/// Element-wise arithmetic mean of parameter sets with identical names and
/// shapes. The result carries the largest step and the config of the last
/// input.
pub fn average_checkpoints(cps: &[Checkpoint]) -> Result<Checkpoint> {
    let last = cps
        .last()
        .ok_or_else(|| Error::Input("average_checkpoints needs at least one checkpoint".into()))?;
    for c in cps {
        if c.tensors.len() != last.tensors.len() || !c.tensors.keys().eq(last.tensors.keys()) {
            return Err(Error::Input("checkpoints hold different parameter names".into()));
        }
        for (name, t) in &c.tensors {
            if t.shape() != last.tensors[name].shape() {
                return Err(Error::Input(format!("parameter {name} differs in shape")));
            }
        }
    }
    let k = cps.len() as f64;
    let tensors = last
        .tensors
        .iter()
        .map(|(name, t)| {
            let data = (0..t.numel())
                .map(|i| (cps.iter().map(|c| f64::from(c.tensors[name].data()[i])).sum::<f64>() / k) as f32)
                .collect();
            Ok((name.clone(), Tensor::new(t.shape().to_vec(), data)?))
        })
        .collect::<Result<_>>()?;
    Ok(Checkpoint {
        step: cps.iter().map(|c| c.step).max().unwrap_or(0),
        config: last.config.clone(),
        tensors,
    })
}
