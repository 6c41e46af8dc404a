use std::fmt;

use super::config::{Head, ModelConfig};

/// What a named tensor does in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    ConvKernel,
    BnScale,
    BnShift,
    BnRunningMean,
    BnRunningVar,
    HvcWeight,
    FcWeight,
    FcBias,
    MergeWeight,
}

impl Role {
    /// Core weights are the convolution kernels and the head's weight tensors.
    pub fn is_core_weight(self) -> bool {
        matches!(self, Role::ConvKernel | Role::HvcWeight | Role::FcWeight)
    }

    /// Buffers are state that is never a model parameter (running statistics).
    pub fn is_buffer(self) -> bool {
        matches!(self, Role::BnRunningMean | Role::BnRunningVar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::ConvKernel => "conv kernel",
            Role::BnScale => "bn scale",
            Role::BnShift => "bn shift",
            Role::BnRunningMean => "bn running mean",
            Role::BnRunningVar => "bn running var",
            Role::HvcWeight => "hvc weight",
            Role::FcWeight => "fc weight",
            Role::FcBias => "fc bias",
            Role::MergeWeight => "merge weight",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub layer: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamEntry {
    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every named tensor of a model in a fixed order. Parameters (trainable or
/// frozen) and running-statistic buffers are both listed; only trainable
/// entries are visible to the optimizer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamManifest {
    pub entries: Vec<ParamEntry>,
}

impl ParamManifest {
    /// Enumerates the tensors implied by `cfg` (which should be validated).
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let mut m = ParamManifest::default();
        let mut cin = 1;
        for (i, &cout) in cfg.conv_filters.iter().enumerate() {
            let layer = format!("conv{}", i + 1);
            m.push(&layer, "kernel", Role::ConvKernel, vec![3, 3, cin, cout], true);
            m.push_bn(&layer, vec![cout]);
            cin = cout;
        }
        for (b, tap) in cfg.taps().iter().enumerate() {
            let layer = format!("branch{}", b + 1);
            match cfg.head {
                Head::Hvc(mode) => {
                    let (n, d) = mode.capsule_shape(tap.spatial, tap.spatial, tap.channels);
                    let hvc = format!("{layer}.hvc");
                    m.push(&hvc, "weight", Role::HvcWeight, vec![n, cfg.classes, d], true);
                    let bn_shape = match cfg.capsule_norm.feature_dims() {
                        2 => vec![cfg.classes, d],
                        _ => vec![d],
                    };
                    m.push_bn(&layer, bn_shape);
                }
                Head::FullyConnected => {
                    let flat = tap.spatial * tap.spatial * tap.channels;
                    let fc = format!("{layer}.fc");
                    m.push(&fc, "weight", Role::FcWeight, vec![flat, cfg.classes], true);
                    m.push(&fc, "bias", Role::FcBias, vec![cfg.classes], true);
                }
            }
        }
        m.push(
            "merge",
            "weight",
            Role::MergeWeight,
            vec![cfg.branches],
            cfg.merge.learnable(),
        );
        m
    }

    fn push(&mut self, layer: &str, field: &str, role: Role, shape: Vec<usize>, trainable: bool) {
        self.entries.push(ParamEntry {
            name: format!("{layer}.{field}"),
            layer: layer.to_string(),
            role,
            shape,
            trainable,
        });
    }

    fn push_bn(&mut self, owner: &str, shape: Vec<usize>) {
        let layer = format!("{owner}.bn");
        self.push(&layer, "gamma", Role::BnScale, shape.clone(), true);
        self.push(&layer, "beta", Role::BnShift, shape.clone(), true);
        self.push(&layer, "running_mean", Role::BnRunningMean, shape.clone(), false);
        self.push(&layer, "running_var", Role::BnRunningVar, shape, false);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    fn sum(&self, keep: impl Fn(&ParamEntry) -> bool) -> usize {
        self.entries.iter().filter(|e| keep(e)).map(ParamEntry::count).sum()
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.sum(|e| e.role == role)
    }

    pub fn core_weights(&self) -> usize {
        self.sum(|e| e.role.is_core_weight())
    }

    pub fn trainable(&self) -> usize {
        self.sum(|e| e.trainable)
    }

    /// All model parameters, frozen merge weights included, buffers excluded.
    pub fn total(&self) -> usize {
        self.sum(|e| !e.role.is_buffer())
    }

    /// Indices of the optimizer-visible entries.
    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].trainable).collect()
    }
}

impl fmt::Display for ParamManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:<16} {:<18} {:>10}  trainable", "name", "role", "shape", "count")?;
        for e in &self.entries {
            if e.role.is_buffer() {
                continue;
            }
            writeln!(
                f,
                "{:<28} {:<16} {:<18} {:>10}  {}",
                e.name,
                e.role.as_str(),
                format!("{:?}", e.shape),
                e.count(),
                if e.trainable { "yes" } else { "no" }
            )?;
        }
        writeln!(f)?;
        writeln!(f, "conv weights      {:>10}", self.count_role(Role::ConvKernel))?;
        let head = self.count_role(Role::HvcWeight) + self.count_role(Role::FcWeight);
        writeln!(f, "head weights      {head:>10}")?;
        writeln!(f, "core weights      {:>10}", self.core_weights())?;
        writeln!(
            f,
            "bn scale/shift    {:>10}",
            self.count_role(Role::BnScale) + self.count_role(Role::BnShift)
        )?;
        writeln!(f, "fc bias           {:>10}", self.count_role(Role::FcBias))?;
        writeln!(f, "merge weights     {:>10}", self.count_role(Role::MergeWeight))?;
        writeln!(f, "trainable         {:>10}", self.trainable())?;
        write!(f, "total             {:>10}", self.total())
    }
}
