use std::fmt;
use std::str::FromStr;

use crate::capsule::{CapsuleDerivation, CapsuleNorm, MergeKind};
use crate::error::{Error, Result};

/// Number of stacked 3x3 convolutions.
pub const CONV_DEPTH: usize = 9;
pub const LADDER_START: usize = 32;
pub const LADDER_STEP: usize = 16;
/// 1-based convolution indices after which the three branches tap off.
pub const BRANCH_TAPS: [usize; 3] = [3, 6, 9];

/// What turns a branch's feature maps into class logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Hvc(CapsuleDerivation),
    FullyConnected,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Hvc(d) => write!(f, "hvc-{d}"),
            Head::FullyConnected => f.write_str("fc"),
        }
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(Head::FullyConnected),
            _ => match s.strip_prefix("hvc-") {
                Some(d) => Ok(Head::Hvc(d.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown head `{s}` (expected hvc-z, hvc-xy or fc)"
                ))),
            },
        }
    }
}

/// Declarative description of one network variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub conv_filters: Vec<usize>,
    pub head: Head,
    pub branches: usize,
    pub merge: MergeKind,
    pub classes: usize,
    pub capsule_norm: CapsuleNorm,
    pub image_size: usize,
    /// Accept filter ladders other than 32, 48, ..., 160 (test-sized networks).
    pub custom_ladder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_filters: default_ladder(),
            head: Head::Hvc(CapsuleDerivation::Z),
            branches: 3,
            merge: MergeKind::OnesInit,
            classes: 10,
            capsule_norm: CapsuleNorm::PerClassDim,
            image_size: 28,
            custom_ladder: false,
        }
    }
}

pub fn default_ladder() -> Vec<usize> {
    (0..CONV_DEPTH).map(|i| LADDER_START + LADDER_STEP * i).collect()
}

/// Extent of original pixels seen by one unit after `depth` stacked 3x3 valid convolutions.
pub fn receptive_field(depth: usize) -> usize {
    1 + 2 * depth
}

/// Geometry of one branch tap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tap {
    /// 1-based index of the convolution the tap follows.
    pub after_conv: usize,
    pub spatial: usize,
    pub channels: usize,
    pub receptive_field: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.len() != CONV_DEPTH {
            return Err(Error::Config(format!(
                "expected {CONV_DEPTH} convolutions, got {}",
                self.conv_filters.len()
            )));
        }
        if !self.custom_ladder && self.conv_filters != default_ladder() {
            return Err(Error::Config(format!(
                "filter ladder must start at {LADDER_START} and grow by {LADDER_STEP}, got {:?}",
                self.conv_filters
            )));
        }
        if self.conv_filters.contains(&0) {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        match self.branches {
            3 => {}
            1 if self.merge.learnable() => {
                return Err(Error::Config(format!(
                    "merge `{}` needs 3 branches; a single branch uses not-learnable",
                    self.merge
                )))
            }
            1 => {}
            b => return Err(Error::Config(format!("branches must be 1 or 3, got {b}"))),
        }
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::Config(format!("class count {} out of range", self.classes)));
        }
        if self.image_size < 2 * CONV_DEPTH + 1 {
            return Err(Error::Config(format!(
                "image size {} too small for {CONV_DEPTH} valid convolutions",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Taps feeding the heads, shallowest first. A single branch uses only the deepest tap.
    pub fn taps(&self) -> Vec<Tap> {
        let taps: &[usize] = if self.branches == 1 {
            &BRANCH_TAPS[2..]
        } else {
            &BRANCH_TAPS
        };
        taps.iter()
            .map(|&after| Tap {
                after_conv: after,
                spatial: self.image_size - 2 * after,
                channels: self.conv_filters[after - 1],
                receptive_field: receptive_field(after),
            })
            .collect()
    }

    /// Writes the config as flat `key = value` lines (the checkpoint header).
    pub fn to_kv(&self) -> String {
        let ladder: Vec<String> = self.conv_filters.iter().map(|f| f.to_string()).collect();
        format!(
            "head = {}\nbranches = {}\nmerge = {}\nclasses = {}\ncapsule_norm = {}\nimage_size = {}\nconv_filters = {}\ncustom_ladder = {}\n",
            self.head,
            self.branches,
            self.merge,
            self.classes,
            self.capsule_norm,
            self.image_size,
            ladder.join(","),
            self.custom_ladder
        )
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys that
    /// are not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |e: &dyn fmt::Display| Error::Config(format!("{key} = {value}: {e}"));
        match key {
            "head" => self.head = value.parse()?,
            "branches" => self.branches = value.parse().map_err(|e| bad(&e))?,
            "merge" => self.merge = value.parse()?,
            "classes" => self.classes = value.parse().map_err(|e| bad(&e))?,
            "capsule_norm" => self.capsule_norm = value.parse()?,
            "image_size" => self.image_size = value.parse().map_err(|e| bad(&e))?,
            "custom_ladder" => self.custom_ladder = value.parse().map_err(|e| bad(&e))?,
            "conv_filters" => {
                self.conv_filters = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (key, value) in crate::config::parse_kv(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Config(format!("unknown model key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_is_32_plus_16() {
        let l = default_ladder();
        assert_eq!(l[0], 32);
        assert!(l.windows(2).all(|w| w[1] - w[0] == 16));
        assert_eq!(l[8], 160);
    }

    #[test]
    fn taps_and_receptive_fields() {
        let taps = ModelConfig::default().taps();
        let got: Vec<(usize, usize, usize)> =
            taps.iter().map(|t| (t.spatial, t.channels, t.receptive_field)).collect();
        assert_eq!(got, vec![(22, 64, 7), (16, 112, 13), (10, 160, 19)]);
        let single = ModelConfig {
            branches: 1,
            merge: MergeKind::NotLearnable,
            ..Default::default()
        };
        assert_eq!(single.taps().len(), 1);
        assert_eq!(single.taps()[0].after_conv, 9);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let one_branch_learned = ModelConfig {
            branches: 1,
            ..Default::default()
        };
        assert!(one_branch_learned.validate().is_err());
        let ladder = ModelConfig {
            conv_filters: vec![8; 9],
            ..Default::default()
        };
        assert!(ladder.validate().is_err());
        assert!(ModelConfig { custom_ladder: true, ..ladder }.validate().is_ok());
        assert!(ModelConfig { branches: 2, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            head: Head::Hvc(CapsuleDerivation::XY),
            merge: MergeKind::RandomInit,
            capsule_norm: CapsuleNorm::PerDim,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn head_names() {
        for h in ["hvc-z", "hvc-xy", "fc"] {
            assert_eq!(h.parse::<Head>().unwrap().to_string(), h);
        }
        assert!("hvc-q".parse::<Head>().is_err());
    }
}
