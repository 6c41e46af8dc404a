use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use super::optim::{lr_at, Adam, Ema, Slot};
use crate::data::{spawn_epoch, AugmentConfig, ImageSet};
use crate::error::{Error, Result};
use crate::model::{argmax, Checkpoint, Model, ModelConfig, OptimizerState};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u64,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub queue_depth: usize,
    pub seed: u64,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test images.
    pub test_limit: Option<usize>,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            base_lr: 0.001,
            lr_decay: 0.98,
            ema_decay: 0.999,
            batch_size: 120,
            eval_batch_size: 100,
            queue_depth: 4,
            seed: 0,
            train_limit: None,
            test_limit: None,
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        rate("base_lr", self.base_lr)?;
        rate("lr_decay", self.lr_decay)?;
        rate("ema_decay", self.ema_decay)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 || self.eval_batch_size == 0 {
            return Err(Error::Config(
                "batch_size must be at least 2 and eval_batch_size at least 1".into(),
            ));
        }
        self.augment.validate()?;
        self.model.validate()
    }
}

/// One epoch's record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc_ema: f64,
    pub merge_weights: Vec<f64>,
    pub batch_losses: Vec<f64>,
}

pub const METRICS_HEADER: &str = "# epoch, lr, train_loss, test_acc_ema, w1, w2, w3";

impl EpochMetrics {
    /// `epoch, lr, train_loss, test_acc_ema, w1, w2, w3`; absent weights print as `nan`.
    pub fn log_line(&self) -> String {
        let w = |i: usize| {
            self.merge_weights
                .get(i)
                .map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
        };
        format!(
            "{}, {:.6e}, {:.6}, {:.4}, {}, {}, {}",
            self.epoch,
            self.lr,
            self.train_loss,
            self.test_acc_ema,
            w(0),
            w(1),
            w(2)
        )
    }
}

/// Accuracy and per-sample predictions over one image set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<u8>,
}

/// Eval-mode predictions for every image in `set`.
pub fn evaluate<T: Element>(model: &Model<T>, set: &ImageSet, batch: usize) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(set.len());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let x = set.tensor::<T>(chunk)?;
        let f = model.forward_eval(&x)?;
        let logits = f.logits_value();
        let m = logits.shape()[1];
        predictions.extend(logits.data().chunks_exact(m).map(|r| argmax(r) as u8));
    }
    let correct = predictions
        .iter()
        .zip(set.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / set.len().max(1) as f64,
        predictions,
    })
}

/// Model, optimizer and EMA state of a run in progress.
#[derive(Clone, Debug)]
pub struct TrainState<T: Element> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub ema: Ema<T>,
    pub epochs_completed: u64,
    pub best_accuracy: f64,
    pub seed: u64,
}

impl<T: Element> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let model = Model::<T>::build(cfg.model.clone(), cfg.seed)?;
        Ok(Self::from_model(model, cfg))
    }

    fn from_model(model: Model<T>, cfg: &TrainConfig) -> Self {
        let idx = model.manifest().trainable_indices();
        let sizes: Vec<usize> = idx.iter().map(|&i| model.values()[i].numel()).collect();
        let params: Vec<&[T]> = idx.iter().map(|&i| model.values()[i].data()).collect();
        let ema = Ema::new(cfg.ema_decay, &params);
        TrainState {
            adam: Adam::new(&sizes),
            ema,
            model,
            epochs_completed: 0,
            best_accuracy: 0.0,
            seed: cfg.seed,
        }
    }

    /// Restores a run from a checkpoint written by [`TrainState::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let model = ck.model::<T>()?;
        let mut state = Self::from_model(model, cfg);
        let cast = |v: &Vec<Vec<f32>>| -> Vec<Vec<T>> {
            v.iter()
                .map(|p| p.iter().map(|&x| T::of_f64(x as f64)).collect())
                .collect()
        };
        if let Some(ema) = &ck.ema {
            state.ema.shadow = cast(ema);
        }
        if let Some(o) = &ck.optimizer {
            state.adam.step = o.step;
            state.adam.m = cast(&o.m);
            state.adam.v = cast(&o.v);
        }
        state.epochs_completed = ck.epochs_completed;
        state.best_accuracy = ck.best_accuracy;
        state.seed = ck.seed;
        Ok(state)
    }

    pub fn checkpoint(&self, run_config: &str) -> Checkpoint {
        let to32 = |v: &Vec<Vec<T>>| -> Vec<Vec<f32>> {
            v.iter()
                .map(|p| p.iter().map(|&x| x.as_f64() as f32).collect())
                .collect()
        };
        Checkpoint {
            config: self.model.config().clone(),
            run_config: run_config.to_string(),
            values: self.model.values().iter().map(Tensor::cast).collect(),
            ema: Some(to32(&self.ema.shadow)),
            optimizer: Some(OptimizerState {
                step: self.adam.step,
                m: to32(&self.adam.m),
                v: to32(&self.adam.v),
            }),
            epochs_completed: self.epochs_completed,
            seed: self.seed,
            best_accuracy: self.best_accuracy,
        }
    }

    /// The live model with the EMA shadows in place of the trainable parameters.
    pub fn ema_model(&self) -> Model<T> {
        let mut m = self.model.clone();
        let idx = m.manifest().trainable_indices();
        for (&i, s) in idx.iter().zip(&self.ema.shadow) {
            m.values_mut()[i].data_mut().copy_from_slice(s);
        }
        m
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn train_step(
        &mut self,
        images: &Tensor<T>,
        labels: &[usize],
        lr: f64,
        epoch: u64,
        batch: usize,
    ) -> Result<f64> {
        let f = self.model.forward_train(images)?;
        let mut g = f.graph;
        let (loss, _) = g.softmax_cross_entropy(f.logits, labels)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch,
                loss: value,
            });
        }
        g.backward(loss)?;
        let idx = self.model.manifest().trainable_indices();
        let grads: Vec<Option<Vec<T>>> = idx
            .iter()
            .map(|&i| f.params[i].and_then(|v| g.take_grad(v)))
            .collect();
        let names: Vec<String> = idx
            .iter()
            .map(|&i| self.model.manifest().entries[i].name.clone())
            .collect();
        let trainable: Vec<bool> = self.model.manifest().entries.iter().map(|e| e.trainable).collect();
        let mut slots: Vec<Slot<'_, T>> = self
            .model
            .values_mut()
            .iter_mut()
            .zip(trainable)
            .filter(|(_, t)| *t)
            .zip(grads.iter().zip(&names))
            .map(|((v, _), (grad, name))| Slot {
                name,
                value: v.data_mut(),
                grad: grad.as_deref(),
            })
            .collect();
        self.adam.step(lr, &mut slots)?;
        drop(slots);
        let params: Vec<&[T]> = idx.iter().map(|&i| self.model.values()[i].data()).collect();
        self.ema.update(&params);
        Ok(value)
    }
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputDir { dir })
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.log")
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    fn append_metrics(&self, m: &EpochMetrics) -> Result<()> {
        let path = self.metrics();
        let fresh = !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str(METRICS_HEADER);
            text.push('\n');
        }
        text.push_str(&m.log_line());
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    }
}

/// Runs the remaining epochs of `state`. After every epoch the EMA model is
/// evaluated on `test`, a metrics line is appended and, when `out` is given,
/// `last.ckpt` and (on improvement) `best.ckpt` are written.
pub fn train<T: Element>(
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    train_set: Arc<ImageSet>,
    test_set: &ImageSet,
    out: Option<&OutputDir>,
    run_config: &str,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let mut history = Vec::new();
    while state.epochs_completed < cfg.epochs {
        let epoch = state.epochs_completed;
        let lr = lr_at(cfg.base_lr, cfg.lr_decay, epoch);
        let (rx, producer) = spawn_epoch::<T>(
            train_set.clone(),
            cfg.augment.clone(),
            state.seed,
            epoch,
            cfg.batch_size,
            cfg.queue_depth,
        );
        let mut batch_losses = Vec::new();
        for batch in rx.iter() {
            let b = batch?;
            let loss = state.train_step(&b.images, &b.labels, lr, epoch + 1, b.index)?;
            batch_losses.push(loss);
        }
        producer
            .join()
            .map_err(|_| Error::Unsupported("batch producer panicked".into()))?;

        let ema_model = state.ema_model();
        let eval = evaluate(&ema_model, test_set, cfg.eval_batch_size)?;
        state.epochs_completed += 1;
        let metrics = EpochMetrics {
            epoch: state.epochs_completed,
            lr,
            train_loss: batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64,
            test_acc_ema: eval.accuracy,
            merge_weights: state.model.merge_weights().iter().map(|w| w.as_f64()).collect(),
            batch_losses,
        };
        let improved = eval.accuracy > state.best_accuracy || state.epochs_completed == 1;
        if improved {
            state.best_accuracy = state.best_accuracy.max(eval.accuracy);
        }
        if let Some(out) = out {
            out.append_metrics(&metrics)?;
            let ck = state.checkpoint(run_config);
            if improved {
                ck.save(out.best())?;
            }
            ck.save(out.last())?;
        }
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

/// Evaluates a checkpoint on `set`, with its EMA weights when `use_ema` is set.
pub fn evaluate_checkpoint<T: Element>(
    ck: &Checkpoint,
    set: &ImageSet,
    use_ema: bool,
    batch: usize,
) -> Result<Evaluation> {
    let model = if use_ema && ck.ema.is_some() {
        ck.ema_model::<T>()?
    } else {
        ck.model::<T>()?
    };
    evaluate(&model, set, batch)
}
