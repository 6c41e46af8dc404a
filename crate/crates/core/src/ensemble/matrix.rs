//! Prediction matrices and their binary file format.
//!
//! ```text
//! "HVCP" u32:version u32:k u32:n u32:m      (little-endian)
//! n x u8 labels
//! k rows of n x u8 predictions
//! k null-terminated model names
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"HVCP";
pub const MATRIX_VERSION: u32 = 1;

/// Predicted classes of `k` models on `n` samples, with ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionMatrix {
    classes: usize,
    labels: Vec<u8>,
    preds: Vec<Vec<u8>>,
    names: Vec<String>,
}

impl PredictionMatrix {
    pub fn new(
        classes: usize,
        labels: Vec<u8>,
        preds: Vec<Vec<u8>>,
        names: Vec<String>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::Shape { op: "prediction_matrix", msg });
        if classes == 0 || classes > 256 {
            return bad(format!("class count {classes} out of range"));
        }
        if names.len() != preds.len() {
            return bad(format!("{} names for {} models", names.len(), preds.len()));
        }
        if let Some(n) = names.iter().find(|n| n.contains('\0')) {
            return bad(format!("model name {n:?} contains a null byte"));
        }
        if let Some(s) = labels.iter().position(|&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                sample: s,
                label: labels[s] as usize,
                classes,
            });
        }
        for (j, row) in preds.iter().enumerate() {
            if row.len() != labels.len() {
                return bad(format!("model {j} has {} predictions, expected {}", row.len(), labels.len()));
            }
            if let Some(s) = row.iter().position(|&p| p as usize >= classes) {
                return bad(format!("model {j} predicts class {} at sample {s}", row[s]));
            }
        }
        Ok(PredictionMatrix {
            classes,
            labels,
            preds,
            names,
        })
    }

    /// Models named `model0`, `model1`, ...
    pub fn unnamed(classes: usize, labels: Vec<u8>, preds: Vec<Vec<u8>>) -> Result<Self> {
        let names = (0..preds.len()).map(|j| format!("model{j}")).collect();
        Self::new(classes, labels, preds, names)
    }

    pub fn models(&self) -> usize {
        self.preds.len()
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, j: usize) -> &[u8] {
        &self.preds[j]
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.preds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Matrix restricted to the given models, in the given order.
    pub fn select(&self, models: &[usize]) -> Result<Self> {
        if let Some(&j) = models.iter().find(|&&j| j >= self.models()) {
            return Err(Error::Config(format!(
                "model index {j} out of range for {} models",
                self.models()
            )));
        }
        Self::new(
            self.classes,
            self.labels.clone(),
            models.iter().map(|&j| self.preds[j].clone()).collect(),
            models.iter().map(|&j| self.names[j].clone()).collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, n) = (self.models(), self.samples());
        let mut out = Vec::with_capacity(20 + n * (k + 1));
        out.extend_from_slice(MATRIX_MAGIC);
        for v in [MATRIX_VERSION, k as u32, n as u32, self.classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        self.preds.iter().for_each(|r| out.extend_from_slice(r));
        for name in &self.names {
            out.extend_from_slice(name.as_bytes());
            out.push(0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, msg: String| Error::parse("prediction matrix", offset as u64, msg);
        let take = |offset: usize, len: usize, what: &str| -> Result<&[u8]> {
            bytes.get(offset..offset + len).ok_or_else(|| {
                err(
                    offset.min(bytes.len()),
                    format!(
                        "truncated {what}: expected {} bytes, file has {}",
                        offset + len,
                        bytes.len()
                    ),
                )
            })
        };
        let word = |offset: usize, what: &str| -> Result<u32> {
            Ok(u32::from_le_bytes(take(offset, 4, what)?.try_into().expect("4 bytes")))
        };
        let magic = take(0, 4, "magic")?;
        if magic != MATRIX_MAGIC {
            return Err(err(0, format!("bad magic {magic:?}, expected \"HVCP\"")));
        }
        let version = word(4, "version")?;
        if version != MATRIX_VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let k = word(8, "model count")? as usize;
        let n = word(12, "sample count")? as usize;
        let m = word(16, "class count")? as usize;
        let mut pos = 20;
        let labels = take(pos, n, "labels")?.to_vec();
        pos += n;
        let mut preds = Vec::with_capacity(k);
        for _ in 0..k {
            preds.push(take(pos, n, "prediction row")?.to_vec());
            pos += n;
        }
        let mut names = Vec::with_capacity(k);
        for j in 0..k {
            let rest = &bytes[pos.min(bytes.len())..];
            let Some(end) = rest.iter().position(|&b| b == 0) else {
                return Err(err(pos, format!("unterminated name of model {j}")));
            };
            let name = std::str::from_utf8(&rest[..end])
                .map_err(|e| err(pos, format!("model {j} name: {e}")))?;
            names.push(name.to_string());
            pos += end + 1;
        }
        if pos != bytes.len() {
            return Err(err(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Self::new(m, labels, preds, names).map_err(|e| err(20, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
