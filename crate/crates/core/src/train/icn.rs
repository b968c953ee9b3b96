use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_loss, Adam, EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::gate::{Difficulty, IcnWeights};
use crate::tensor::softmax_raw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    WeightedCrossEntropy,
}

/// Loss for the two-way classifier; weights are `[easy, hard]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub class_weights: [f64; 2],
}

impl LossSpec {
    pub fn unweighted() -> Self {
        LossSpec {
            kind: LossKind::CrossEntropy,
            class_weights: [1.0, 1.0],
        }
    }

    pub fn weighted(class_weights: [f64; 2]) -> Result<Self> {
        if class_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Param(format!("class weights must be > 0, got {class_weights:?}")));
        }
        Ok(LossSpec {
            kind: LossKind::WeightedCrossEntropy,
            class_weights,
        })
    }

    fn weight(&self, class: usize) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => 1.0,
            LossKind::WeightedCrossEntropy => self.class_weights[class],
        }
    }
}

fn class_index(d: Difficulty) -> usize {
    match d {
        Difficulty::Easy => 0,
        Difficulty::Hard => 1,
    }
}

/// Inverse class frequency normalised to mean 1. Returns `(weights, single_class)`;
/// a single-class label set gets `[1, 1]`.
pub fn class_weights(labels: &[Difficulty]) -> ([f64; 2], bool) {
    let easy = labels.iter().filter(|l| **l == Difficulty::Easy).count();
    let hard = labels.len() - easy;
    if easy == 0 || hard == 0 {
        return ([1.0, 1.0], true);
    }
    let (ie, ih) = (1.0 / easy as f64, 1.0 / hard as f64);
    let s = ie + ih;
    ([2.0 * ie / s, 2.0 * ih / s], false)
}

/// Gradient buffers for [`IcnWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct IcnGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl IcnGrads {
    pub fn zeros(icn: &IcnWeights) -> Self {
        IcnGrads {
            w1: vec![0.0; icn.w1.data().len()],
            b1: vec![0.0; icn.b1.len()],
            w2: vec![0.0; icn.w2.data().len()],
            b2: vec![0.0; 2],
        }
    }

    fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

struct IcnCache {
    pre: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
}

fn icn_cached(icn: &IcnWeights, u: &[f64]) -> IcnCache {
    let pre: Vec<f64> = (0..icn.hidden())
        .map(|r| icn.b1[r] + icn.w1.row(r).iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let h: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
    let z: Vec<f64> = (0..2)
        .map(|r| icn.b2[r] + icn.w2.row(r).iter().zip(&h).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    IcnCache { pre, h, p: softmax_raw(&z) }
}

/// Weighted cross-entropy of one example.
pub fn icn_loss(icn: &IcnWeights, u: &[f64], label: Difficulty, loss: &LossSpec) -> f64 {
    let y = class_index(label);
    -loss.weight(y) * icn_cached(icn, u).p[y].max(f64::MIN_POSITIVE).ln()
}

/// Adds the gradient of [`icn_loss`] into `g`; returns the loss and whether the argmax was right.
pub fn icn_grads(icn: &IcnWeights, u: &[f64], label: Difficulty, loss: &LossSpec, g: &mut IcnGrads) -> (f64, bool) {
    let y = class_index(label);
    let c = icn_cached(icn, u);
    let w = loss.weight(y);
    let l = -w * c.p[y].max(f64::MIN_POSITIVE).ln();
    let correct = (c.p[0] > c.p[1]) == (y == 0);
    let dz: Vec<f64> = (0..2).map(|k| w * (c.p[k] - if k == y { 1.0 } else { 0.0 })).collect();
    let l1 = icn.hidden();
    let mut dh = vec![0.0; l1];
    for k in 0..2 {
        g.b2[k] += dz[k];
        for r in 0..l1 {
            g.w2[k * l1 + r] += dz[k] * c.h[r];
            dh[r] += icn.w2.get(k, r) * dz[k];
        }
    }
    let d = u.len();
    for r in 0..l1 {
        if c.pre[r] > 0.0 {
            g.b1[r] += dh[r];
            for (gi, ui) in g.w1[r * d..(r + 1) * d].iter_mut().zip(u) {
                *gi += dh[r] * ui;
            }
        }
    }
    (l, correct)
}

#[derive(Debug, Clone)]
pub struct IcnTrainResult {
    pub weights: IcnWeights,
    pub logs: Vec<EpochLog>,
    /// Only one class was present in the labels.
    pub single_class: bool,
}

/// Trains a fresh ICN with `hidden` units on fixed first-hop features.
pub fn train_icn(
    features: &[Vec<f64>],
    labels: &[Difficulty],
    hidden: usize,
    cfg: &TrainConfig,
    loss: &LossSpec,
) -> Result<IcnTrainResult> {
    cfg.validate()?;
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::dim("icn training set", labels.len(), features.len()));
    }
    if hidden == 0 {
        return Err(Error::Param("ICN hidden width must be >= 1".into()));
    }
    let d = features[0].len();
    let single_class = labels.iter().all(|l| *l == labels[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1c4);
    let mut icn = IcnWeights::random(d, hidden, &mut rng);
    let mut g = IcnGrads::zeros(&icn);
    let mut adam = Adam::new([g.w1.len(), g.b1.len(), g.w2.len(), 2], cfg);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            g.buffers_mut().into_iter().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
            for &i in batch {
                let (l, c) = icn_grads(&icn, &features[i], labels[i], loss, &mut g);
                loss_sum += l;
                correct += c as usize;
            }
            let inv = 1.0 / batch.len() as f64;
            g.buffers_mut().into_iter().for_each(|b| b.iter_mut().for_each(|x| *x *= inv));
            let IcnWeights { w1, b1, w2, b2 } = &mut icn;
            adam.step(
                lr,
                [w1.data_mut(), b1.as_mut_slice(), w2.data_mut(), b2.as_mut_slice()],
                [g.w1.as_slice(), g.b1.as_slice(), g.w2.as_slice(), g.b2.as_slice()],
            );
        }
        let mean = loss_sum / features.len() as f64;
        check_loss(epoch, mean)?;
        logs.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: mean,
            accuracy: correct as f64 / features.len() as f64,
        });
    }
    Ok(IcnTrainResult {
        weights: icn,
        logs,
        single_class,
    })
}
