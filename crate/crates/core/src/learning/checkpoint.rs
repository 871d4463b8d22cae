//! Binary checkpoint container.
//!
//! Layout (little endian): magic `MOGCKPT\0`, `u32` version, `u64` header
//! length, JSON header, `u32` tensor count, then per tensor `u32` name length,
//! UTF-8 name, `u32` rank, `u64` extents, and row-major `f64` data.
//! Parameters are stored as `param/<name>`, optimizer moments as
//! `adam.m/<name>` and `adam.v/<name>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, OptimizerConfig};
use crate::error::{MogError, Result};
use crate::model::{ModelConfig, MogNet};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"MOGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    /// Identifies the training run independently of its epoch budget, so a
    /// run can be resumed with a longer one.
    pub run_key: String,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub experts: usize,
    pub intents: Vec<String>,
    /// Completed training epochs.
    pub epoch: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    pub adam_step: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    /// First and second moments in parameter order.
    pub adam: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, model: &MogNet, adam: Option<&Adam>) -> Self {
        let mut meta = meta;
        meta.adam_step = adam.map(|a| a.step);
        Checkpoint {
            meta,
            params: model.params.clone(),
            adam: adam.map(|a| (a.m.clone(), a.v.clone())),
        }
    }

    pub fn model(&self) -> Result<MogNet> {
        MogNet::from_params(self.meta.model.clone(), self.params.clone())
    }

    pub fn optimizer(&self, config: OptimizerConfig) -> Result<Option<Adam>> {
        match (&self.adam, self.meta.adam_step) {
            (Some((m, v)), Some(step)) => Adam::from_state(config, step, m.clone(), v.clone(), &self.params).map(Some),
            _ => Ok(None),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.meta).map_err(|e| MogError::state(format!("header encoding: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut entries: Vec<(String, &[usize], &[f64])> = Vec::new();
        for (name, t) in self.params.iter() {
            entries.push((format!("param/{name}"), t.shape(), t.data()));
        }
        if let Some((m, v)) = &self.adam {
            for (prefix, moments) in [("adam.m", m), ("adam.v", v)] {
                for ((name, t), data) in self.params.iter().zip(moments) {
                    entries.push((format!("{prefix}/{name}"), t.shape(), data));
                }
            }
        }
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, shape, data) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: &str| MogError::Format {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated magic"))? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated version"))?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let header = r.take(hlen).ok_or_else(|| bad("truncated header"))?;
        let meta: CheckpointMeta = serde_json::from_slice(header).map_err(|e| bad(&format!("header: {e}")))?;
        let count = r.u32().ok_or_else(|| bad("truncated tensor count"))?;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let nlen = r.u32().ok_or_else(|| bad("truncated name"))? as usize;
            let name = std::str::from_utf8(r.take(nlen).ok_or_else(|| bad("truncated name"))?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32().ok_or_else(|| bad("truncated rank"))? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated shape"))?;
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| r.f64())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad(&format!("truncated data for `{name}`")))?;
            let (kind, pname) = name.split_once('/').ok_or_else(|| bad(&format!("bad tensor name `{name}`")))?;
            match kind {
                "param" => {
                    let t = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
                    params.insert(pname, t).map_err(|e| bad(&e.to_string()))?;
                }
                "adam.m" => m.push((pname.to_string(), data)),
                "adam.v" => v.push((pname.to_string(), data)),
                _ => return Err(bad(&format!("unknown tensor kind `{kind}`"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let order = |moments: Vec<(String, Vec<f64>)>| -> Result<Vec<Vec<f64>>> {
            let names: Vec<&str> = params.iter().map(|(n, _)| n).collect();
            if moments.len() != names.len() || moments.iter().zip(&names).any(|((a, _), b)| a != b) {
                return Err(bad("optimizer moments do not follow the parameter list"));
            }
            Ok(moments.into_iter().map(|(_, d)| d).collect())
        };
        let adam = if m.is_empty() && v.is_empty() {
            None
        } else {
            Some((order(m)?, order(v)?))
        };
        Ok(Checkpoint { meta, params, adam })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| MogError::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| MogError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| MogError::io(&tmp, e))?;
        f.sync_all().map_err(|e| MogError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| MogError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MogError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
