//! Named parameter storage and its layout for a given [`ModelConfig`].

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, IN_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::ops::RunningStats;
use crate::tensor::{Real, Tensor};

pub const STEM_LARGE: &str = "stem.large";
pub const STEM_BASE: &str = "stem.base";
pub const STEM_SMALL: &str = "stem.small";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, shape: [usize; 4], bias: bool) {
    let fan_in = shape[1] * shape[2] * shape[3];
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: shape.to_vec(),
        init: Init::Kaiming { fan_in },
    });
    if bias {
        out.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![shape[0]],
            init: Init::Zeros,
        });
    }
}

fn norm(out: &mut Vec<ParamSpec>, name: &str, channels: usize) {
    out.push(ParamSpec {
        name: format!("{name}.gamma"),
        shape: vec![channels],
        init: Init::Ones,
    });
    out.push(ParamSpec {
        name: format!("{name}.beta"),
        shape: vec![channels],
        init: Init::Zeros,
    });
}

fn stem_specs(out: &mut Vec<ParamSpec>, p: &str, cfg: &ModelConfig) {
    let c = IN_CHANNELS;
    let w = cfg.base_channels;
    if cfg.wavelet_branch {
        for band in ["hh", "hl", "lh"] {
            conv(out, &format!("{p}.ds_{band}.dw"), [c, 1, 3, 3], true);
            conv(out, &format!("{p}.ds_{band}.pw"), [c, c, 1, 1], true);
        }
        out.push(ParamSpec {
            name: format!("{p}.wt.base"),
            shape: vec![c, 1, 3, 3],
            init: Init::Kaiming { fan_in: 9 },
        });
        for l in 0..cfg.wtconv_levels {
            out.push(ParamSpec {
                name: format!("{p}.wt.band{l}"),
                shape: vec![4 * c, 1, 3, 3],
                init: Init::Kaiming { fan_in: 9 },
            });
        }
        conv(out, &format!("{p}.dir_x"), [c, c, 1, 3], true);
        conv(out, &format!("{p}.dir_y"), [c, c, 3, 1], true);
        conv(out, &format!("{p}.dir_xy"), [c, c, 3, 3], true);
        conv(out, &format!("{p}.ffn1"), [6 * c, 6 * c, 1, 1], true);
        conv(out, &format!("{p}.ffn2"), [3 * c, 6 * c, 1, 1], true);
        // The branch starts silent so the stem begins as I + idwt2(0, 0, 0, ll).
        // Left random, it reinjects the low band into the detail bands at
        // an amplitude that buries faint high-frequency traces.
        out.last_mut().expect("ffn2 bias").init = Init::Zeros;
        let n = out.len();
        out[n - 2].init = Init::Zeros;
    }
    conv(out, &format!("{p}.cdc"), [w, c, 3, 3], true);
    norm(out, &format!("{p}.bn"), w);
}

fn spb_specs(out: &mut Vec<ParamSpec>, p: &str, w: usize) {
    conv(out, &format!("{p}.conv1"), [w, w, 3, 3], false);
    norm(out, &format!("{p}.bn1"), w);
    conv(out, &format!("{p}.proj"), [w, w, 1, 1], true);
    conv(out, &format!("{p}.conv2"), [w, w, 3, 3], false);
    norm(out, &format!("{p}.bn2"), w);
}

fn fpb_specs(out: &mut Vec<ParamSpec>, p: &str, w: usize) {
    conv(out, &format!("{p}.spec"), [2 * w, 2 * w, 1, 1], true);
    norm(out, &format!("{p}.ln"), w);
    conv(out, &format!("{p}.expand"), [2 * w, w, 1, 1], true);
    conv(out, &format!("{p}.out"), [w, w, 1, 1], true);
}

fn linear(out: &mut Vec<ParamSpec>, name: &str, o: usize, i: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![o, i],
        init: Init::Kaiming { fan_in: i },
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![o],
        init: Init::Zeros,
    });
}

/// Every trainable tensor of the network, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let w = cfg.base_channels;
    let mut out = Vec::new();
    if cfg.use_large_scale {
        stem_specs(&mut out, STEM_LARGE, cfg);
        spb_specs(&mut out, "spb1", w);
    }
    stem_specs(&mut out, STEM_BASE, cfg);
    spb_specs(&mut out, "spb2", w);
    if cfg.use_small_scale {
        stem_specs(&mut out, STEM_SMALL, cfg);
    }
    for i in 0..cfg.fpb_count {
        fpb_specs(&mut out, &format!("fpb{i}"), w);
    }
    linear(&mut out, "head.fc1", w / 2, w);
    linear(&mut out, "head.fc2", 1, w / 2);
    out
}

/// Batch-norm layers and their channel counts.
pub fn bn_layers(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let w = cfg.base_channels;
    let mut out = Vec::new();
    if cfg.use_large_scale {
        out.push((format!("{STEM_LARGE}.bn"), w));
        out.push(("spb1.bn1".into(), w));
        out.push(("spb1.bn2".into(), w));
    }
    out.push((format!("{STEM_BASE}.bn"), w));
    out.push(("spb2.bn1".into(), w));
    out.push(("spb2.bn2".into(), w));
    if cfg.use_small_scale {
        out.push((format!("{STEM_SMALL}.bn"), w));
    }
    out
}

/// Trainable tensors plus batch-norm running statistics, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor<T>>,
    pub stats: BTreeMap<String, RunningStats<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization: Kaiming-uniform weights, zero biases, unit
    /// norm scales, identity running statistics.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_specs(cfg)
            .into_iter()
            .map(|s| {
                let t = match s.init {
                    Init::Kaiming { fan_in } => {
                        let b = (6.0 / fan_in as f64).sqrt();
                        Tensor::uniform(&s.shape, -b, b, &mut rng)
                    }
                    Init::Zeros => Tensor::zeros(&s.shape),
                    Init::Ones => Tensor::full(&s.shape, T::one()),
                };
                (s.name, t)
            })
            .collect();
        Ok(Self::with_params(cfg, params))
    }

    /// Every tensor zero, running statistics identity.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let params = param_specs(cfg)
            .into_iter()
            .map(|s| (s.name, Tensor::zeros(&s.shape)))
            .collect();
        Ok(Self::with_params(cfg, params))
    }

    fn with_params(cfg: &ModelConfig, params: BTreeMap<String, Tensor<T>>) -> Self {
        let stats = bn_layers(cfg)
            .into_iter()
            .map(|(n, c)| (n, RunningStats::identity(c)))
            .collect();
        ModelParams {
            config: *cfg,
            params,
            stats,
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract("model", format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::contract("model", format!("missing parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(
                "model",
                format!("'{name}' expects {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn stats(&self, layer: &str) -> Result<&RunningStats<T>> {
        self.stats
            .get(layer)
            .ok_or_else(|| Error::contract("model", format!("missing batch-norm layer '{layer}'")))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
            && self.stats.values().all(|s| s.mean.all_finite() && s.var.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            stats: self
                .stats
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: s.mean.cast(),
                            var: s.var.cast(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Check names and shapes against the layout of `self.config`.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = param_specs(&self.config);
        if specs.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Config(format!("'{}' has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
        }
        for (layer, c) in bn_layers(&self.config) {
            let st = self.stats(&layer)?;
            if st.mean.shape() != [c] || st.var.shape() != [c] {
                return Err(Error::Config(format!("running statistics of '{layer}' are not [{c}]")));
            }
        }
        if !self.all_finite() {
            return Err(Error::NonFinite { op: "model parameters" });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_consistent() {
        let cfg = ModelConfig::with_scale(32);
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        p.validate().unwrap();
        assert!(p.params.contains_key("stem.small.wt.band0"));
        assert!(p.params.contains_key("fpb1.out.weight"));
        assert_eq!(p.get("stem.base.cdc.weight").unwrap().shape(), &[32, 1, 3, 3]);
        assert_eq!(p.get("head.fc1.weight").unwrap().shape(), &[16, 32]);
        // stems are independent tensors
        assert_ne!(p.get("stem.base.cdc.weight").unwrap(), p.get("stem.small.cdc.weight").unwrap());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::with_scale(32);
        let a = ModelParams::<f64>::init(&cfg, 9).unwrap();
        assert_eq!(a, ModelParams::<f64>::init(&cfg, 9).unwrap());
        assert_ne!(a, ModelParams::<f64>::init(&cfg, 10).unwrap());
        let w = a.get("spb2.conv1.weight").unwrap();
        let bound = (6.0f64 / (32.0 * 9.0)).sqrt();
        assert!(w.max_abs() <= bound);
        assert_eq!(a.get("spb2.bn1.gamma").unwrap().sum(), 32.0);
    }

    #[test]
    fn ablations_drop_tensors() {
        let cfg = ModelConfig {
            use_large_scale: false,
            use_small_scale: false,
            wavelet_branch: false,
            ..ModelConfig::with_scale(32)
        };
        let p = ModelParams::<f32>::zeros(&cfg).unwrap();
        assert!(p.params.keys().all(|k| !k.starts_with("stem.large") && !k.contains(".wt.")));
        assert_eq!(bn_layers(&cfg).len(), 3);
    }
}
