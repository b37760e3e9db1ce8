use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::config::TrainConfig;
use super::optim::{cosine_lr, Adam};
use crate::data::{derive_seed, GrayImage, FAKE_LABEL, REAL_LABEL};
use crate::error::{Error, Result};
use crate::model::{prepare_inputs, Graph, ModelConfig, ModelParams};
use crate::tensor::ops::update_running;
use crate::tensor::{Mode, Precision, Real, Tensor};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_474d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Percent of training samples classified correctly during the epoch,
    /// from the train-mode forward passes.
    pub train_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub epochs: Vec<EpochRecord>,
    /// Learning rate used at every step.
    pub lr_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,train_acc,lr\n");
        for r in &self.epochs {
            writeln!(s, "{},{:.8},{:.4},{:.8e}", r.epoch, r.mean_loss, r.train_acc, r.lr).expect("string write");
        }
        s
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_dataset(samples: &[(GrayImage, u8)]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some((_, l)) = samples.iter().find(|(_, l)| *l != REAL_LABEL && *l != FAKE_LABEL) {
        return Err(Error::Config(format!("label {l} is neither real nor fake")));
    }
    let fakes = samples.iter().filter(|(_, l)| *l == FAKE_LABEL).count();
    if fakes == 0 || fakes == samples.len() {
        return Err(Error::Config("training set must contain both real and fake images".into()));
    }
    Ok(())
}

/// Train from a fresh seeded initialization. `progress` sees each epoch as
/// it completes.
pub fn train(
    samples: &[(GrayImage, u8)],
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    check_dataset(samples)?;
    match cfg.precision {
        Precision::F32 => train_in::<f32>(samples, model, cfg, progress),
        Precision::F64 => train_in::<f64>(samples, model, cfg, progress),
    }
}

fn train_in<T: Real>(
    samples: &[(GrayImage, u8)],
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut params = ModelParams::<T>::init(model, cfg.seed)?;
    let mut adam = Adam::<T>::new();
    let n = samples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let horizon = (total - 1).max(1);
    let mut lr_trace = Vec::with_capacity(total);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut lr = cfg.learning_rate;
        for batch in order.chunks(cfg.batch_size) {
            let images: Vec<GrayImage> = batch
                .par_iter()
                .map(|&i| {
                    let s = derive_seed(cfg.seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                    augment(&samples[i].0, &cfg.augment, &mut ChaCha8Rng::seed_from_u64(s))
                })
                .collect();
            let refs: Vec<&GrayImage> = images.iter().collect();
            let labels: Vec<T> = batch.iter().map(|&i| T::of(f64::from(samples[i].1))).collect();
            let inputs = prepare_inputs::<T>(&refs, model)?;

            let mut graph = Graph::new(&params, Mode::Train, true);
            let logits = graph.forward(&inputs)?;
            let loss = graph.tape.bce_with_logits(logits, &labels)?;
            let loss_value = graph.tape.value(loss).data()[0].f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            correct += graph
                .tape
                .value(logits)
                .data()
                .iter()
                .zip(&labels)
                .filter(|(z, y)| (**z >= T::zero()) == (**y == T::one()))
                .count();
            loss_sum += loss_value * batch.len() as f64;

            let (mut tape, vars) = graph.into_parts();
            let observations = tape.take_observations();
            let mut grads = tape.backward(loss)?;
            let named: BTreeMap<String, Tensor<T>> = vars
                .iter()
                .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
                .collect();
            lr = if total == 1 {
                cfg.learning_rate
            } else {
                cosine_lr(step, horizon, cfg.learning_rate, cfg.lr_min)?
            };
            adam.update(&mut params.params, &named, lr)?;
            for obs in observations {
                let stats = params
                    .stats
                    .get_mut(&obs.key)
                    .ok_or_else(|| Error::contract("train", format!("unknown batch-norm layer '{}'", obs.key)))?;
                update_running(stats, &obs.mean, &obs.var);
            }
            lr_trace.push(lr);
            step += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: loss_sum / n as f64,
            train_acc: 100.0 * correct as f64 / n as f64,
            lr,
        };
        progress(&record);
        epochs.push(record);
    }
    if !params.all_finite() {
        return Err(Error::NonFinite { op: "trained parameters" });
    }
    Ok(TrainOutcome {
        params: params.cast(),
        epochs,
        lr_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_image, ToySplit};
    use crate::training::AugmentConfig;

    fn tiny_set(n: usize) -> Vec<(GrayImage, u8)> {
        (0..n)
            .flat_map(|i| {
                [
                    (toy_image(32, 3, ToySplit::Train, false, i).unwrap(), 0),
                    (toy_image(32, 3, ToySplit::Train, true, i).unwrap(), 1),
                ]
            })
            .collect()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            fpb_count: 1,
            ..ModelConfig::with_scale(16)
        }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 2,
            learning_rate: 1e-3,
            lr_min: 1e-5,
            augment: AugmentConfig::default(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<_> = tiny_set(3).into_iter().filter(|s| s.1 == 0).collect();
        assert!(matches!(train(&data, &tiny_model(), &quick_cfg(), |_| {}), Err(Error::Config(_))));
        assert!(matches!(train(&[], &tiny_model(), &quick_cfg(), |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn runs_are_reproducible_and_schedule_spans_the_range() {
        let data = tiny_set(5);
        let a = train(&data, &tiny_model(), &quick_cfg(), |_| {}).unwrap();
        let b = train(&data, &tiny_model(), &quick_cfg(), |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lr_trace.len(), 6);
        assert_eq!(a.lr_trace[0], 1e-3);
        assert!((a.lr_trace[5] - 1e-5).abs() < 1e-15);
        assert_eq!(a.epochs.len(), 2);
        assert!(a.trace_csv().starts_with("epoch,mean_loss,train_acc,lr\n1,"));
        assert_ne!(a.params, ModelParams::init(&tiny_model(), 0).unwrap());
        // batch-norm running statistics moved away from identity
        assert_ne!(a.params.stats["spb2.bn1"].mean.sum(), 0.0);
    }
}
