//! Mini-batch training with RMSProp, the staircase schedule and optional
//! augmentation; fully deterministic for a fixed seed.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lr_schedule, RmsProp, RmsPropConfig};
use crate::blocks::Mode;
use crate::data::{AugmentConfig, Augmentation};
use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::scalar::Real;
use crate::tensor::{read_vten, write_vten, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: RmsPropConfig,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            optimizer: RmsPropConfig::default(),
            augment: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy of the training-mode predictions made during the epoch.
    pub train_acc: f64,
    pub test_acc: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc";

impl EpochLog {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.6},{:.6}",
            self.epoch, self.lr, self.train_loss, self.train_acc, self.test_acc
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for l in log {
        let _ = writeln!(s, "{}", l.csv_line());
    }
    s
}

fn stack<T: Real>(samples: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = samples.first().ok_or_else(|| invalid!("empty batch"))?;
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * samples.len());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(invalid!("samples in a batch must share a shape"));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(shape, data)
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode logits for every sample, in order.
pub fn predict<T: Real>(model: &Model<T>, samples: &[&Tensor<T>], batch_size: usize) -> Result<Tensor<T>> {
    let k = model.config.num_classes;
    let mut out = Vec::with_capacity(samples.len() * k);
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut f = model.forward_mode(Mode::Infer);
        let x = f.tape.constant(stack(chunk)?);
        let y = model.logits(&mut f, x)?;
        out.extend_from_slice(f.value(y).data());
    }
    Tensor::new(vec![samples.len(), k], out)
}

/// Fraction of samples whose inference-mode argmax matches the label.
pub fn accuracy<T: Real>(model: &Model<T>, data: &[(Tensor<T>, usize)], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<&Tensor<T>> = data.iter().map(|(t, _)| t).collect();
    let logits = predict(model, &refs, batch_size)?;
    let k = model.config.num_classes;
    let hits = data
        .iter()
        .enumerate()
        .filter(|(i, (_, l))| argmax(&logits.data()[i * k..(i + 1) * k]) == *l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

pub struct Trainer<T> {
    pub config: TrainConfig,
    pub optimizer: RmsProp<T>,
    shuffle_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    pub step: usize,
    pub epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, model: &Model<T>) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        if let Some(a) = &config.augment {
            a.validate()?;
        }
        Ok(Trainer {
            config,
            optimizer: RmsProp::new(config.optimizer, &model.params),
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.seed),
            augment_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a06d),
            step: 0,
            epoch: 0,
        })
    }

    /// One pass over `train` followed by an inference-mode evaluation on `test`.
    pub fn run_epoch(
        &mut self,
        model: &mut Model<T>,
        train: &[(Tensor<T>, usize)],
        test: &[(Tensor<T>, usize)],
    ) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(invalid!("training set is empty"));
        }
        let bs = self.config.batch_size;
        let steps_per_epoch = train.len().div_ceil(bs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (mut loss_sum, mut hits, mut lr) = (0.0, 0usize, 0.0);
        let k = model.config.num_classes;
        for batch in order.chunks(bs) {
            let mut inputs = Vec::with_capacity(batch.len());
            for &i in batch {
                let t = &train[i].0;
                inputs.push(match &self.config.augment {
                    Some(cfg) => {
                        let (h, w) = (t.shape()[0], t.shape()[1]);
                        Augmentation::sample(cfg, h, w, &mut self.augment_rng).apply(t)?
                    }
                    None => t.clone(),
                });
            }
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].1).collect();
            let scale = lr_schedule(self.step as f64 / steps_per_epoch as f64);
            lr = self.config.optimizer.lr * scale;

            let (grads, updates, loss, logits) = {
                let mut f = model.forward_mode(Mode::Train);
                let x = f.tape.constant(stack(&inputs.iter().collect::<Vec<_>>())?);
                let y = model.logits(&mut f, x)?;
                let l = f.tape.cross_entropy(y, &labels)?;
                let loss = f.value(l).data()[0].as_f64();
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss diverged at epoch {} step {}",
                        self.epoch + 1,
                        self.step
                    )));
                }
                (f.tape.backward(l)?, std::mem::take(&mut f.bn_updates), loss, f.value(y).clone())
            };
            for (r, &l) in labels.iter().enumerate() {
                hits += (argmax(&logits.data()[r * k..(r + 1) * k]) == l) as usize;
            }
            loss_sum += loss * batch.len() as f64;
            self.optimizer.step(&mut model.params, &grads, scale)?;
            model.apply_bn_updates(&updates);
            self.step += 1;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            test_acc: accuracy(model, test, bs)?,
        })
    }
}

/// Runs `config.epochs` epochs, calling `on_epoch` after each.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train: &[(Tensor<T>, usize)],
    test: &[(Tensor<T>, usize)],
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut trainer = Trainer::new(config, model)?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let entry = trainer.run_epoch(model, train, test)?;
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Stores RMSProp accumulators and momentum buffers next to saved weights.
pub fn save_optimizer<T: Real>(opt: &RmsProp<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref().join("optimizer");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&opt.config)?)?;
    for (i, (a, v)) in opt.acc.iter().zip(&opt.velocity).enumerate() {
        write_vten(dir.join(format!("acc{i:04}.vten")), a)?;
        write_vten(dir.join(format!("vel{i:04}.vten")), v)?;
    }
    Ok(())
}

pub fn load_optimizer<T: Real>(model: &Model<T>, dir: impl AsRef<Path>) -> Result<RmsProp<T>> {
    let dir = dir.as_ref().join("optimizer");
    let config: RmsPropConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    let mut opt = RmsProp::new(config, &model.params);
    for (i, (_, p)) in model.params.iter().enumerate() {
        let a: Tensor<T> = read_vten(dir.join(format!("acc{i:04}.vten")))?;
        let v: Tensor<T> = read_vten(dir.join(format!("vel{i:04}.vten")))?;
        if a.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(invalid!("optimizer state for '{}' has the wrong shape", p.name));
        }
        opt.acc[i] = a;
        opt.velocity[i] = v;
    }
    Ok(opt)
}
