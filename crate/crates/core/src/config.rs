//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Each remaining line
//! holds one `key = value` pair; a key may appear only once.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Splits configuration text into ordered `(key, value)` pairs.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                i + 1
            )));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Every key accepted in a run configuration: `(key, default, meaning)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data_dir", "data", "directory holding the four MNIST IDX files"),
    ("out_dir", "runs/default", "where checkpoints and metrics.log are written"),
    ("threads", "0", "worker threads for data and compute pools; 0 uses every core"),
    ("precision", "f32", "training precision: f32 or f64"),
    ("epochs", "300", "number of training epochs"),
    ("base_lr", "0.001", "learning rate of epoch 0"),
    ("lr_decay", "0.98", "per-epoch learning-rate multiplier"),
    ("ema_decay", "0.999", "decay of the weight moving average used for evaluation"),
    ("batch_size", "120", "training batch size"),
    ("eval_batch_size", "100", "evaluation batch size"),
    ("queue_depth", "4", "augmented batches prepared ahead of the optimizer"),
    ("seed", "0", "seed of initialisation, shuffling and augmentation"),
    ("train_limit", "all", "use only the first N training images"),
    ("test_limit", "all", "use only the first N test images"),
    ("augment", "full", "augmentation: full, translate-2px, translate-margin or none"),
    ("rotation_max_deg", "30", "largest rotation in degrees"),
    ("rotation_prob", "0.5", "probability of rotating an image"),
    ("width_squeeze_max", "0.25", "largest fractional width reduction"),
    ("erase_patch", "4", "side of the erased square"),
    ("erase_region", "20", "side of the centred square the erased patch stays inside"),
    ("head", "hvc-z", "classifier head: hvc-z, hvc-xy or fc"),
    ("branches", "3", "number of branches: 1 or 3"),
    ("merge", "ones-init", "branch merge: not-learnable, random-init or ones-init"),
    ("classes", "10", "number of classes"),
    ("capsule_norm", "class-dim", "capsule batch-norm statistics: class-dim or dim"),
    ("image_size", "28", "input side length"),
    ("conv_filters", "32,48,...,160", "comma-separated filter counts of the nine convolutions"),
    ("custom_ladder", "false", "allow filter counts other than the default ladder"),
];

/// Numeric type used for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (f32, f64)"))),
        }
    }
}

/// Training settings plus the paths and resources of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// 0 means one thread per core.
    pub threads: usize,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            threads: 0,
            precision: Precision::F32,
        }
    }
}

fn limit(value: &str) -> std::result::Result<Option<usize>, std::num::ParseIntError> {
    if value == "all" {
        Ok(None)
    } else {
        value.parse().map(Some)
    }
}

impl RunConfig {
    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn fmt::Display| Error::Config(format!("{key} = {value}: {e}"));
        let t = &mut self.train;
        let a = &mut t.augment;
        match key {
            "data_dir" => self.data_dir = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "threads" => self.threads = value.parse().map_err(|e| bad(&e))?,
            "precision" => self.precision = value.parse()?,
            "epochs" => t.epochs = value.parse().map_err(|e| bad(&e))?,
            "base_lr" => t.base_lr = value.parse().map_err(|e| bad(&e))?,
            "lr_decay" => t.lr_decay = value.parse().map_err(|e| bad(&e))?,
            "ema_decay" => t.ema_decay = value.parse().map_err(|e| bad(&e))?,
            "batch_size" => t.batch_size = value.parse().map_err(|e| bad(&e))?,
            "eval_batch_size" => t.eval_batch_size = value.parse().map_err(|e| bad(&e))?,
            "queue_depth" => t.queue_depth = value.parse().map_err(|e| bad(&e))?,
            "seed" => t.seed = value.parse().map_err(|e| bad(&e))?,
            "train_limit" => t.train_limit = limit(value).map_err(|e| bad(&e))?,
            "test_limit" => t.test_limit = limit(value).map_err(|e| bad(&e))?,
            "augment" => a.strategy = value.parse()?,
            "rotation_max_deg" => a.rotation_max_deg = value.parse().map_err(|e| bad(&e))?,
            "rotation_prob" => a.rotation_prob = value.parse().map_err(|e| bad(&e))?,
            "width_squeeze_max" => a.width_squeeze_max = value.parse().map_err(|e| bad(&e))?,
            "erase_patch" => a.erase_patch = value.parse().map_err(|e| bad(&e))?,
            "erase_region" => a.erase_region = value.parse().map_err(|e| bad(&e))?,
            _ => {
                if !t.model.set(key, value)? {
                    return Err(Error::Config(format!(
                        "unknown key `{key}` (see --help for the accepted keys)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `pairs` in order, so later pairs override earlier ones.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    /// Defaults overridden by the settings in `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }

    /// Every key with its current value, in the order of [`KEYS`].
    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let a = &t.augment;
        let m = &t.model;
        let opt = |v: Option<usize>| v.map_or("all".to_string(), |n| n.to_string());
        let ladder: Vec<String> = m.conv_filters.iter().map(|f| f.to_string()).collect();
        let values = [
            self.data_dir.display().to_string(),
            self.out_dir.display().to_string(),
            self.threads.to_string(),
            self.precision.to_string(),
            t.epochs.to_string(),
            t.base_lr.to_string(),
            t.lr_decay.to_string(),
            t.ema_decay.to_string(),
            t.batch_size.to_string(),
            t.eval_batch_size.to_string(),
            t.queue_depth.to_string(),
            t.seed.to_string(),
            opt(t.train_limit),
            opt(t.test_limit),
            a.strategy.to_string(),
            a.rotation_max_deg.to_string(),
            a.rotation_prob.to_string(),
            a.width_squeeze_max.to_string(),
            a.erase_patch.to_string(),
            a.erase_region.to_string(),
            m.head.to_string(),
            m.branches.to_string(),
            m.merge.to_string(),
            m.classes.to_string(),
            m.capsule_norm.to_string(),
            m.image_size.to_string(),
            ladder.join(","),
            m.custom_ladder.to_string(),
        ];
        let mut out = String::new();
        for ((key, _, _), v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (`key = value`, one per line, `#` comments):\n");
    for (key, default, meaning) in KEYS {
        let _ = writeln!(out, "  {key:<18} {meaning} [default: {default}]");
    }
    out
}
