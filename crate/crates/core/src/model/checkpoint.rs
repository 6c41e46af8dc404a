//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HVCK" u32:version
//! u32:len model-config-text        (flat key = value)
//! u32:len run-config-text          (opaque to this module)
//! u32:entries { u32:len name, u8:trainable, u8:rank, u32 x rank dims }
//! f32 payload for every entry, in manifest order
//! u8:has_ema   [f32 payload for every trainable entry]
//! u8:has_optim [u64:step, f32 first moments, f32 second moments per trainable entry]
//! u64:epochs_completed u64:seed f64:best_accuracy
//! ```

use std::path::Path;

use super::config::ModelConfig;
use super::manifest::ParamManifest;
use super::network::Model;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam moments for the trainable entries, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

/// Everything needed to evaluate or resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub run_config: String,
    pub values: Vec<Tensor<f32>>,
    /// Shadow weights for the trainable entries.
    pub ema: Option<Vec<Vec<f32>>>,
    pub optimizer: Option<OptimizerState>,
    pub epochs_completed: u64,
    pub seed: u64,
    pub best_accuracy: f64,
}

impl Checkpoint {
    pub fn from_model<T: Element>(model: &Model<T>, seed: u64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            run_config: String::new(),
            values: model.values().iter().map(Tensor::cast).collect(),
            ema: None,
            optimizer: None,
            epochs_completed: 0,
            seed,
            best_accuracy: 0.0,
        }
    }

    pub fn model<T: Element>(&self) -> Result<Model<T>> {
        Model::from_parts(self.config.clone(), self.values.iter().map(Tensor::cast).collect())
    }

    /// The model with its trainable entries replaced by the EMA shadows.
    pub fn ema_model<T: Element>(&self) -> Result<Model<T>> {
        let mut model = self.model::<T>()?;
        let Some(ema) = &self.ema else {
            return Err(Error::Config("checkpoint holds no EMA weights".into()));
        };
        let idx = model.manifest().trainable_indices();
        for (&i, shadow) in idx.iter().zip(ema) {
            let dst = model.values_mut()[i].data_mut();
            dst.iter_mut().zip(shadow).for_each(|(d, &s)| *d = T::of_f64(s as f64));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = ParamManifest::for_config(&self.config);
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.config.to_kv());
        put_str(&mut out, &self.run_config);
        put_u32(&mut out, manifest.len() as u32);
        for e in &manifest.entries {
            put_str(&mut out, &e.name);
            out.push(e.trainable as u8);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                put_u32(&mut out, d as u32);
            }
        }
        for v in &self.values {
            put_f32s(&mut out, v.data());
        }
        match &self.ema {
            Some(ema) => {
                out.push(1);
                ema.iter().for_each(|p| put_f32s(&mut out, p));
            }
            None => out.push(0),
        }
        match &self.optimizer {
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                o.m.iter().chain(&o.v).for_each(|p| put_f32s(&mut out, p));
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.epochs_completed.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.best_accuracy.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"HVCK\"")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let at = r.pos;
        let config_text = r.string("model config")?;
        let config = ModelConfig::from_kv(&config_text)
            .map_err(|e| r.error_at(at, format!("model config: {e}")))?;
        let run_config = r.string("run config")?;
        let manifest = ParamManifest::for_config(&config);
        let at = r.pos;
        let count = r.u32("entry count")? as usize;
        if count != manifest.len() {
            return Err(r.error_at(
                at,
                format!("{count} entries, config implies {}", manifest.len()),
            ));
        }
        for e in &manifest.entries {
            let at = r.pos;
            let name = r.string("entry name")?;
            let trainable = r.take(1, "trainable flag")?[0] != 0;
            let rank = r.take(1, "rank")?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            if name != e.name || trainable != e.trainable || dims != e.shape {
                return Err(r.error_at(
                    at,
                    format!(
                        "entry `{name}` {dims:?} does not match manifest entry `{}` {:?}",
                        e.name, e.shape
                    ),
                ));
            }
        }
        let mut values = Vec::with_capacity(manifest.len());
        for e in &manifest.entries {
            values.push(Tensor::new(e.shape.clone(), r.f32s(e.count(), &e.name)?)?);
        }
        let trainable: Vec<usize> = manifest
            .entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.count())
            .collect();
        let ema = if r.flag("ema flag")? {
            Some(r.blocks(&trainable, "ema")?)
        } else {
            None
        };
        let optimizer = if r.flag("optimizer flag")? {
            let step = r.u64("optimizer step")?;
            let m = r.blocks(&trainable, "first moment")?;
            let v = r.blocks(&trainable, "second moment")?;
            Some(OptimizerState { step, m, v })
        } else {
            None
        };
        let epochs_completed = r.u64("epochs")?;
        let seed = r.u64("seed")?;
        let best_accuracy = f64::from_bits(r.u64("best accuracy")?);
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            run_config,
            values,
            ema,
            optimizer,
            epochs_completed,
            seed,
            best_accuracy,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(v.len() * 4);
    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::parse("checkpoint", offset as u64, msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error_at(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        let at = self.pos;
        match self.take(1, what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.error_at(at, format!("{what} must be 0 or 1, got {b}"))),
        }
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|e| self.error_at(at, format!("{what}: {e}")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn blocks(&mut self, counts: &[usize], what: &str) -> Result<Vec<Vec<f32>>> {
        counts.iter().map(|&n| self.f32s(n, what)).collect()
    }
}
