//! Analytic-gradient training of the baseline network, the early-exit head,
//! the ICN, and confidence-threshold calibration.

mod adam;
pub mod backprop;
mod calibrate;
mod icn;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use backprop::{fc_grads, forward_cached, hop_features, sample_grads, sample_loss, Grads};
pub use calibrate::{calibrate_thresholds, CalibrationResult, GateEvidence};
pub use icn::{class_weights, icn_grads, icn_loss, train_icn, IcnGrads, IcnTrainResult, LossKind, LossSpec};

use crate::babi::Sample;
use crate::error::{Error, Result};
use crate::model::{HyperParams, Model, ModelWeights};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
    /// Halve the learning rate every this many epochs.
    pub anneal_every: Option<usize>,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
}

impl TrainConfig {
    /// Baseline network recipe.
    pub fn baseline() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            grad_clip_norm: Some(40.0),
            anneal_every: Some(15),
            init_std: 0.1,
        }
    }

    /// Early-exit head on frozen first-hop features.
    pub fn fc_e() -> Self {
        TrainConfig {
            epochs: 30,
            anneal_every: Some(10),
            ..Self::baseline()
        }
    }

    /// ICN with the bAbI learning rate.
    pub fn icn() -> Self {
        TrainConfig {
            epochs: 60,
            anneal_every: Some(20),
            grad_clip_norm: None,
            ..Self::baseline()
        }
    }

    /// ICN with the key-value learning rate.
    pub fn icn_key_value() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            ..Self::icn()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Param(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Param("Adam betas must be in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn lr_at(&self, epoch: usize) -> f64 {
        match self.anneal_every {
            Some(n) if n > 0 => self.learning_rate * 0.5f64.powi(((epoch - 1) / n) as i32),
            _ => self.learning_rate,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn to_jsonl(logs: &[EpochLog]) -> String {
    logs.iter()
        .map(|l| serde_json::to_string(l).expect("log entries serialize") + "\n")
        .collect()
}

fn check_loss(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            msg: format!("mean loss became {loss}"),
        })
    }
}

fn clip(grads: &mut Grads, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let n = grads.norm();
        if n > max {
            grads.scale(max / n);
        }
    }
}

fn evaluate(weights: &ModelWeights, hyper: &HyperParams, samples: &[Sample]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let (l, c) = sample_loss(weights, hyper, s)?;
        loss += l;
        correct += c as usize;
    }
    let n = samples.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains the baseline network from a seeded initialisation.
pub fn train_baseline(
    train: &[Sample],
    valid: &[Sample],
    hyper: &HyperParams,
    cfg: &TrainConfig,
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = ModelWeights::init(hyper, cfg.init_std, &mut rng)?;
    continue_baseline(weights, train, valid, hyper, cfg, &mut rng)
}

/// Continues training `weights` with the given configuration.
pub fn continue_baseline(
    mut weights: ModelWeights,
    train: &[Sample],
    valid: &[Sample],
    hyper: &HyperParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    cfg.validate()?;
    weights.validate(hyper)?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut grads = Grads::zeros(&weights);
    let mut adam = Adam::new(grads.buffers().map(Vec::len), cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let (l, c) = sample_grads(&weights, hyper, &train[i], &mut grads)?;
                loss_sum += l;
                correct += c as usize;
            }
            grads.scale(1.0 / batch.len() as f64);
            clip(&mut grads, cfg.grad_clip_norm);
            let params = weights
                .embeds
                .iter_mut()
                .chain(std::iter::once(&mut weights.w))
                .chain(weights.r.iter_mut())
                .map(Matrix::data_mut);
            adam.step(lr, params, grads.buffers().map(Vec::as_slice));
            weights.zero_padding();
        }
        let loss = loss_sum / train.len() as f64;
        check_loss(epoch, loss)?;
        logs.push(EpochLog {
            epoch,
            split: "train".into(),
            loss,
            accuracy: correct as f64 / train.len() as f64,
        });
        if !valid.is_empty() {
            let (loss, accuracy) = evaluate(&weights, hyper, valid)?;
            logs.push(EpochLog {
                epoch,
                split: "valid".into(),
                loss,
                accuracy,
            });
        }
    }
    Ok((weights, logs))
}

/// Trains the early-exit head on frozen first-hop outputs, starting from `W`.
pub fn train_fc_e(model: &Model, train: &[Sample], cfg: &TrainConfig) -> Result<(Matrix, Vec<EpochLog>)> {
    cfg.validate()?;
    let features = train
        .iter()
        .map(|s| hop_features(&model.weights, &model.hyper, s, 1))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = train.iter().map(|s| s.answer).collect();
    train_fc_on(model.weights.w.clone(), &features, &labels, cfg)
}

/// Softmax regression of `labels` on fixed `features`, starting at `init`.
pub fn train_fc_on(
    mut w: Matrix,
    features: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Matrix, Vec<EpochLog>)> {
    if features.len() != labels.len() {
        return Err(Error::dim("features", labels.len(), features.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xfce);
    let mut grad = vec![0.0; w.data().len()];
    let mut adam = Adam::new([grad.len()], cfg);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (l, c) = fc_grads(&w, &features[i], labels[i], &mut grad);
                loss_sum += l;
                correct += c as usize;
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if let Some(max) = cfg.grad_clip_norm {
                let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if n > max {
                    grad.iter_mut().for_each(|g| *g *= max / n);
                }
            }
            adam.step(lr, [w.data_mut()], [grad.as_slice()]);
        }
        let loss = loss_sum / features.len().max(1) as f64;
        check_loss(epoch, loss)?;
        logs.push(EpochLog {
            epoch,
            split: "train".into(),
            loss,
            accuracy: correct as f64 / features.len().max(1) as f64,
        });
    }
    Ok((w, logs))
}
