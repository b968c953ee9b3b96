//! Input classifier network (ICN) and the confidence-threshold activation
//! module that decide, after the first hop, whether a query exits early.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::babi::Sample;
use crate::error::{Error, Result};
use crate::model::{HopPolicy, InferenceOptions, Model};
use crate::tensor::{self, Category, FlopLedger, Matrix};

/// Two affine layers with a ReLU between them and two outputs (Easy, Hard).
#[derive(Debug, Clone, PartialEq)]
pub struct IcnWeights {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl IcnWeights {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        IcnWeights {
            w1: Matrix::zeros(hidden, d),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(2, hidden),
            b2: vec![0.0; 2],
        }
    }

    pub fn random(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let s1 = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("finite std");
        let s2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("finite std");
        IcnWeights {
            w1: Matrix::from_fn(hidden, d, |_, _| s1.sample(rng)),
            b1: vec![0.0; hidden],
            w2: Matrix::from_fn(2, hidden, |_, _| s2.sample(rng)),
            b2: vec![0.0; 2],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let l1 = self.hidden();
        if l1 == 0 {
            return Err(Error::Param("ICN hidden width must be >= 1".into()));
        }
        if self.b1.len() != l1 {
            return Err(Error::dim("icn.b1", l1, self.b1.len()));
        }
        if self.w2.rows() != 2 || self.w2.cols() != l1 {
            return Err(Error::dim("icn.W2", 2 * l1, self.w2.rows() * self.w2.cols()));
        }
        if self.b2.len() != 2 {
            return Err(Error::dim("icn.b2", 2, self.b2.len()));
        }
        Ok(())
    }
}

/// `(p_easy, p_hard)` for the first-hop output key `u2`.
///
/// Each affine layer is charged `rows · 2 cols` (bias folded into the
/// accumulation), ReLU comparisons are free and the 2-way softmax costs 25,
/// so one call charges exactly `2 L1 (d + 2) + 25` to [`Category::Icn`].
pub fn icn_forward(u2: &[f64], icn: &IcnWeights, ledger: &mut FlopLedger) -> Result<(f64, f64)> {
    if u2.len() != icn.input_dim() {
        return Err(Error::dim("icn_forward", icn.input_dim(), u2.len()));
    }
    let mut h = tensor::matvec_acc(&icn.w1, u2, ledger, Category::Icn)?.into_inner();
    for (x, b) in h.iter_mut().zip(&icn.b1) {
        *x = (*x + b).max(0.0);
    }
    let mut z = tensor::matvec_acc(&icn.w2, &h, ledger, Category::Icn)?.into_inner();
    for (x, b) in z.iter_mut().zip(&icn.b2) {
        *x += b;
    }
    let p = tensor::softmax_as(&z, ledger, Category::Icn)?;
    Ok((p[0], p[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// No confidence threshold: Easy iff `p_easy > p_hard`.
    Nc,
    Global,
    PerTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub mode: GateMode,
    pub z_global: f64,
    #[serde(default)]
    pub z_per_task: BTreeMap<u32, f64>,
}

impl GateConfig {
    pub fn nc() -> Self {
        GateConfig {
            mode: GateMode::Nc,
            z_global: 0.5,
            z_per_task: BTreeMap::new(),
        }
    }

    pub fn global(z: f64) -> Self {
        GateConfig {
            mode: GateMode::Global,
            z_global: z,
            z_per_task: BTreeMap::new(),
        }
    }

    pub fn per_task(z_global: f64, z_per_task: BTreeMap<u32, f64>) -> Self {
        GateConfig {
            mode: GateMode::PerTask,
            z_global,
            z_per_task,
        }
    }

    /// A threshold no probability can exceed: every query goes Hard.
    pub fn all_hard() -> Self {
        GateConfig::global(1.0)
    }

    /// Reference thresholds reported for the bAbI ICN (global 0.6 and the
    /// per-task table). Calibrated on other weights; not expected to transfer.
    pub fn babi_reference() -> Self {
        let table = [
            (2, 0.52),
            (3, 0.8),
            (6, 0.95),
            (8, 0.68),
            (9, 0.85),
            (10, 0.99),
            (12, 0.8),
            (14, 0.84),
            (15, 0.67),
            (18, 0.99),
            (19, 0.59),
        ];
        GateConfig::per_task(0.6, table.into_iter().collect())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |z: f64| z > 0.0 && z <= 1.0;
        if !ok(self.z_global) || !self.z_per_task.values().all(|&z| ok(z)) {
            return Err(Error::Param("gate thresholds must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, task_id: u32) -> f64 {
        match self.mode {
            GateMode::Nc => 0.5,
            GateMode::Global => self.z_global,
            GateMode::PerTask => self.z_per_task.get(&task_id).copied().unwrap_or(self.z_global),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Activation module: Easy only when the Easy output is the larger one and
/// strictly exceeds the task's threshold.
pub fn decide_route(probs: (f64, f64), task_id: u32, cfg: &GateConfig) -> Difficulty {
    let (easy, hard) = probs;
    let easy_wins = easy > hard;
    let confident = match cfg.mode {
        GateMode::Nc => true,
        _ => easy > cfg.threshold(task_id),
    };
    if easy_wins && confident {
        Difficulty::Easy
    } else {
        Difficulty::Hard
    }
}

/// Easy when the early head is right; Hard when only the full-depth model is
/// right; Easy again when both miss, since extra hops would not help.
pub fn label_rule(early_correct: bool, full_correct: bool) -> Difficulty {
    match (early_correct, full_correct) {
        (true, _) => Difficulty::Easy,
        (false, true) => Difficulty::Hard,
        (false, false) => Difficulty::Easy,
    }
}

/// Labels each sample by running the 1-hop early head and the full model.
pub fn generate_labels(model: &Model, samples: &[Sample]) -> Result<Vec<Difficulty>> {
    if model.w_e.is_none() {
        return Err(Error::Config("label generation needs a trained W_E".into()));
    }
    let one = InferenceOptions::new(HopPolicy::OneHop);
    let all = InferenceOptions::new(HopPolicy::AllHops);
    samples
        .iter()
        .map(|s| {
            let mut scratch = FlopLedger::new();
            let early = model.forward(s, &one, None, &mut scratch)?;
            let full = model.forward(s, &all, None, &mut scratch)?;
            Ok(label_rule(early.answer == s.answer, full.answer == s.answer))
        })
        .collect()
}
