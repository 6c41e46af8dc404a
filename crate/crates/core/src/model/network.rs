use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Head, ModelConfig};
use super::manifest::{ParamManifest, Role};
use crate::capsule::MergeKind;
use crate::error::{Error, Result};
use crate::tensor::ops::{BatchStats, NormMode, RunningStats};
use crate::tensor::{Element, Graph, Tensor, Var};

/// A built network: configuration, manifest and one tensor per manifest entry.
#[derive(Clone, Debug)]
pub struct Model<T: Element> {
    config: ModelConfig,
    manifest: ParamManifest,
    values: Vec<Tensor<T>>,
}

/// One recorded forward pass.
pub struct Forward<T: Element> {
    pub graph: Graph<T>,
    pub logits: Var,
    pub branch_logits: Vec<Var>,
    /// Post-activation feature maps at each branch tap.
    pub taps: Vec<Var>,
    /// Graph leaf for every manifest entry that is a parameter.
    pub params: Vec<Option<Var>>,
    /// Batch statistics per (running mean index, running var index), train mode only.
    pub batch_stats: Vec<(usize, usize, BatchStats)>,
}

impl<T: Element> Forward<T> {
    pub fn logits_value(&self) -> &Tensor<T> {
        self.graph.value(self.logits)
    }
}

impl<T: Element> Model<T> {
    /// Builds and initialises a model. Identical seeds give bit-identical parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let manifest = ParamManifest::for_config(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(manifest.len());
        for e in &manifest.entries {
            let n = e.count();
            let uniform = |limit: f64, rng: &mut ChaCha8Rng| -> Vec<T> {
                let dist = Uniform::new_inclusive(-limit, limit);
                (0..n).map(|_| T::of_f64(dist.sample(rng))).collect()
            };
            let data = match e.role {
                Role::ConvKernel => {
                    let fan_in = (e.shape[0] * e.shape[1] * e.shape[2]) as f64;
                    uniform((6.0 / fan_in).sqrt(), &mut rng)
                }
                Role::HvcWeight => uniform(1.0 / (e.shape[2] as f64).sqrt(), &mut rng),
                Role::FcWeight => uniform(1.0 / (e.shape[0] as f64).sqrt(), &mut rng),
                Role::BnScale | Role::BnRunningVar => vec![T::one(); n],
                Role::BnShift | Role::BnRunningMean | Role::FcBias => vec![T::zero(); n],
                Role::MergeWeight => match config.merge {
                    MergeKind::RandomInit => uniform(1.0, &mut rng),
                    MergeKind::OnesInit | MergeKind::NotLearnable => vec![T::one(); n],
                },
            };
            values.push(Tensor::new(e.shape.clone(), data)?);
        }
        Ok(Model {
            config,
            manifest,
            values,
        })
    }

    /// Reassembles a model from stored tensors, checking them against the manifest.
    pub fn from_parts(config: ModelConfig, values: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let manifest = ParamManifest::for_config(&config);
        if values.len() != manifest.len() {
            return Err(Error::Shape {
                op: "model",
                msg: format!("expected {} tensors, got {}", manifest.len(), values.len()),
            });
        }
        for (e, v) in manifest.entries.iter().zip(&values) {
            if v.shape() != e.shape.as_slice() {
                return Err(Error::Shape {
                    op: "model",
                    msg: format!("{} has shape {:?}, expected {:?}", e.name, v.shape(), e.shape),
                });
            }
        }
        Ok(Model {
            config,
            manifest,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn manifest(&self) -> &ParamManifest {
        &self.manifest
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.manifest.index_of(name).map(|i| &self.values[i])
    }

    pub fn merge_weights(&self) -> &[T] {
        let i = self.manifest.len() - 1;
        debug_assert_eq!(self.manifest.entries[i].role, Role::MergeWeight);
        self.values[i].data()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            manifest: self.manifest.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records a forward pass without touching the running statistics.
    pub fn forward(&self, input: &Tensor<T>, mode: NormMode) -> Result<Forward<T>> {
        let size = self.config.image_size;
        let s = input.shape();
        if s.len() != 4 || s[1] != size || s[2] != size || s[3] != 1 {
            return Err(Error::Shape {
                op: "forward",
                msg: format!("input must be [N,{size},{size},1], got {s:?}"),
            });
        }
        let mut g = Graph::new();
        let params: Vec<Option<Var>> = self
            .manifest
            .entries
            .iter()
            .zip(&self.values)
            .map(|(e, v)| (!e.role.is_buffer()).then(|| g.leaf(v.clone(), e.trainable)))
            .collect();
        let mut batch_stats = Vec::new();
        let mut cursor = 0usize;
        let mut next = |k: usize| {
            cursor += k;
            cursor - k
        };

        let mut bn = |g: &mut Graph<T>, x: Var, first: usize, feature_dims: usize| -> Result<Var> {
            let (mean_i, var_i) = (first + 2, first + 3);
            let stats = RunningStats {
                mean: self.values[mean_i].data().to_vec(),
                var: self.values[var_i].data().to_vec(),
                ..RunningStats::new(0)
            };
            let gamma = params[first].expect("bn scale is a parameter");
            let beta = params[first + 1].expect("bn shift is a parameter");
            let (y, batch) = g.batch_norm_deferred(x, gamma, beta, &stats, mode, feature_dims)?;
            if let Some(b) = batch {
                batch_stats.push((mean_i, var_i, b));
            }
            Ok(g.relu(y))
        };

        let mut x = g.constant(input.clone());
        let mut tap_vars = Vec::new();
        let taps = self.config.taps();
        for conv in 1..=self.config.conv_filters.len() {
            let kernel = params[next(1)].expect("kernel is a parameter");
            let y = g.conv2d_valid(x, kernel)?;
            let first = next(4);
            x = bn(&mut g, y, first, 1)?;
            if taps.iter().any(|t| t.after_conv == conv) {
                tap_vars.push(x);
            }
        }

        let mut branch_logits = Vec::with_capacity(tap_vars.len());
        for &tap in &tap_vars {
            let n = g.shape(tap)[0];
            let logits = match self.config.head {
                Head::Hvc(mode) => {
                    let caps = g.derive_capsules(tap, mode)?;
                    let w = params[next(1)].expect("hvc weight is a parameter");
                    let cv = g.hvc_class_vectors(caps, w)?;
                    let first = next(4);
                    let a = bn(&mut g, cv, first, self.config.capsule_norm.feature_dims())?;
                    g.branch_logits(a)?
                }
                Head::FullyConnected => {
                    let flat: usize = g.shape(tap)[1..].iter().product();
                    let f = g.reshape(tap, &[n, flat])?;
                    let w = params[next(1)].expect("fc weight is a parameter");
                    let b = params[next(1)].expect("fc bias is a parameter");
                    let y = g.matmul(f, w)?;
                    g.add(y, b)?
                }
            };
            branch_logits.push(logits);
        }
        let merge_i = next(1);
        debug_assert_eq!(merge_i + 1, self.manifest.len());
        let merge = params[merge_i].expect("merge weight is a parameter");
        let logits = g.merge_branches(&branch_logits, merge)?;
        Ok(Forward {
            graph: g,
            logits,
            branch_logits,
            taps: tap_vars,
            params,
            batch_stats,
        })
    }

    /// Train-mode forward pass; folds the batch statistics into the running stats.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Forward<T>> {
        let f = self.forward(input, NormMode::Train)?;
        self.apply_batch_stats(&f.batch_stats);
        Ok(f)
    }

    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Forward<T>> {
        self.forward(input, NormMode::Eval)
    }

    pub fn apply_batch_stats(&mut self, batch_stats: &[(usize, usize, BatchStats)]) {
        for (mean_i, var_i, b) in batch_stats {
            let mut stats = RunningStats {
                mean: self.values[*mean_i].data().to_vec(),
                var: self.values[*var_i].data().to_vec(),
                ..RunningStats::new(0)
            };
            stats.update(b);
            self.values[*mean_i].data_mut().copy_from_slice(&stats.mean);
            self.values[*var_i].data_mut().copy_from_slice(&stats.var);
        }
    }

    /// Eval-mode logits, in batches of `batch` samples.
    pub fn predict_logits(&self, images: &Tensor<T>, batch: usize) -> Result<Vec<Tensor<T>>> {
        let s = images.shape().to_vec();
        let per: usize = s[1..].iter().product();
        let mut out = Vec::new();
        for chunk in images.data().chunks(batch.max(1) * per) {
            let n = chunk.len() / per;
            let x = Tensor::new(vec![n, s[1], s[2], s[3]], chunk.to_vec())?;
            let f = self.forward_eval(&x)?;
            out.push(f.logits_value().clone());
        }
        Ok(out)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsule::{CapsuleDerivation, CapsuleNorm};
    use crate::model::config::default_ladder;

    fn small(head: Head, branches: usize, merge: MergeKind) -> ModelConfig {
        ModelConfig {
            conv_filters: vec![2, 3, 4, 2, 3, 4, 2, 3, 4],
            head,
            branches,
            merge,
            custom_ladder: true,
            ..Default::default()
        }
    }

    fn random_input(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Uniform::new(0.0f32, 1.0);
        Tensor::new(vec![n, 28, 28, 1], (0..n * 784).map(|_| d.sample(&mut rng)).collect())
            .unwrap()
    }

    #[test]
    fn full_network_tap_shapes() {
        assert_eq!(default_ladder().len(), 9);
        let m = Model::<f32>::build(ModelConfig::default(), 1).unwrap();
        let f = m.forward_eval(&random_input(2, 2)).unwrap();
        let shapes: Vec<&[usize]> = f.taps.iter().map(|&t| f.graph.shape(t)).collect();
        assert_eq!(shapes, vec![&[2, 22, 22, 64][..], &[2, 16, 16, 112], &[2, 10, 10, 160]]);
        assert_eq!(f.graph.shape(f.logits), &[2, 10]);
        assert_eq!(f.branch_logits.len(), 3);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = small(Head::Hvc(CapsuleDerivation::Z), 3, MergeKind::RandomInit);
        let a = Model::<f32>::build(cfg.clone(), 9).unwrap();
        let b = Model::<f32>::build(cfg.clone(), 9).unwrap();
        let c = Model::<f32>::build(cfg, 10).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn zero_input_with_zero_shift_is_uniform() {
        let m = Model::<f64>::build(ModelConfig::default(), 3).unwrap();
        let x = Tensor::<f64>::zeros([1, 28, 28, 1]);
        let f = m.forward_eval(&x).unwrap();
        let l = f.logits_value().data();
        assert!(l.iter().all(|&v| v == l[0]), "{l:?}");
    }

    #[test]
    fn fc_head_on_zero_input_with_zero_bias() {
        let m = Model::<f64>::build(small(Head::FullyConnected, 1, MergeKind::NotLearnable), 4)
            .unwrap();
        let x = Tensor::<f64>::zeros([2, 28, 28, 1]);
        let f = m.forward_eval(&x).unwrap();
        // BN shifts are zero, so every activation and every logit is zero.
        assert!(f.logits_value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_merge_weights_scales_logits() {
        let cfg = small(Head::Hvc(CapsuleDerivation::XY), 3, MergeKind::RandomInit);
        let mut m = Model::<f64>::build(cfg, 5).unwrap();
        let x = random_input(3, 6).cast::<f64>();
        let before = m.forward_eval(&x).unwrap().logits_value().clone();
        let last = m.values().len() - 1;
        m.values_mut()[last].data_mut().iter_mut().for_each(|w| *w *= 2.5);
        let after = m.forward_eval(&x).unwrap().logits_value().clone();
        for (a, b) in before.data().chunks(10).zip(after.data().chunks(10)) {
            assert_eq!(argmax(a), argmax(b));
            for (p, q) in a.iter().zip(b) {
                assert!((p * 2.5 - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn train_forward_updates_running_stats_and_eval_is_pure() {
        let cfg = ModelConfig {
            capsule_norm: CapsuleNorm::PerDim,
            ..small(Head::Hvc(CapsuleDerivation::Z), 3, MergeKind::OnesInit)
        };
        let mut m = Model::<f32>::build(cfg, 7).unwrap();
        let x = random_input(4, 8);
        let e1 = m.forward_eval(&x).unwrap().logits_value().clone();
        let e2 = m.forward_eval(&x).unwrap().logits_value().clone();
        assert_eq!(e1, e2);
        let before = m.value("conv1.bn.running_mean").unwrap().clone();
        m.forward_train(&x).unwrap();
        assert_ne!(m.value("conv1.bn.running_mean").unwrap(), &before);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = Model::<f32>::build(small(Head::FullyConnected, 3, MergeKind::OnesInit), 1)
            .unwrap();
        assert!(m.forward_eval(&Tensor::zeros([1, 27, 28, 1])).is_err());
    }

    #[test]
    fn every_trainable_parameter_gets_a_gradient() {
        let cfg = small(Head::Hvc(CapsuleDerivation::Z), 3, MergeKind::NotLearnable);
        let mut m = Model::<f64>::build(cfg, 11).unwrap();
        let x = random_input(3, 12).cast::<f64>();
        let f = m.forward_train(&x).unwrap();
        let mut g = f.graph;
        let (loss, _) = g.softmax_cross_entropy(f.logits, &[1, 2, 3]).unwrap();
        g.backward(loss).unwrap();
        for (e, p) in m.manifest().entries.iter().zip(&f.params) {
            match p {
                Some(v) => assert_eq!(g.grad(*v).is_some(), e.trainable, "{}", e.name),
                None => assert!(e.role.is_buffer()),
            }
        }
    }
}
