use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::babi::Sample;
use crate::error::{Error, Result};
use crate::gate::{icn_forward, GateConfig, GateMode};
use crate::model::{HopPolicy, InferenceOptions, Model};
use crate::tensor::FlopLedger;

/// What the gate needs to know about one validation query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateEvidence {
    pub task_id: u32,
    pub p_easy: f64,
    pub p_hard: f64,
    pub early_correct: bool,
    pub full_correct: bool,
}

impl GateEvidence {
    fn easy_at(&self, z: f64) -> bool {
        self.p_easy > self.p_hard && self.p_easy > z
    }

    fn correct_at(&self, z: f64) -> bool {
        if self.easy_at(z) {
            self.early_correct
        } else {
            self.full_correct
        }
    }

    /// Runs the early head, the full model and the ICN on each sample.
    pub fn gather(model: &Model, samples: &[Sample], use_pruned: bool) -> Result<Vec<GateEvidence>> {
        let icn = model
            .icn
            .as_ref()
            .ok_or_else(|| Error::Config("calibration needs trained ICN weights".into()))?;
        let mut one = InferenceOptions::new(HopPolicy::OneHop);
        let mut all = InferenceOptions::new(HopPolicy::AllHops);
        one.use_pruned = use_pruned;
        all.use_pruned = use_pruned;
        samples
            .par_iter()
            .map(|s| {
                let mut scratch = FlopLedger::new();
                let early = model.forward(s, &one, None, &mut scratch)?;
                let full = model.forward(s, &all, None, &mut scratch)?;
                let u2 = model.hop_state(s, 1)?;
                let (p_easy, p_hard) = icn_forward(&u2, icn, &mut scratch)?;
                Ok(GateEvidence {
                    task_id: s.task_id,
                    p_easy,
                    p_hard,
                    early_correct: early.answer == s.answer,
                    full_correct: full.answer == s.answer,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub config: GateConfig,
    /// Tasks (or every task, for a global search) where no threshold met the budget.
    pub flagged_tasks: Vec<u32>,
}

fn grid() -> impl Iterator<Item = f64> {
    (50..=99).map(|i| i as f64 / 100.0)
}

/// `baseline accuracy - gated accuracy` at threshold `z`.
fn loss_at(ev: &[&GateEvidence], z: f64) -> f64 {
    let n = ev.len() as f64;
    let base = ev.iter().filter(|e| e.full_correct).count() as f64 / n;
    let gated = ev.iter().filter(|e| e.correct_at(z)).count() as f64 / n;
    base - gated
}

fn smallest_within(ev: &[&GateEvidence], budget: f64) -> Option<f64> {
    grid().find(|&z| loss_at(ev, z) <= budget + 1e-12)
}

/// Picks confidence thresholds on a 0.50..0.99 grid so that the accuracy
/// loss against the full model stays within `budget` (a fraction).
pub fn calibrate_thresholds(evidence: &[GateEvidence], mode: GateMode, budget: f64) -> Result<CalibrationResult> {
    if evidence.is_empty() {
        return Err(Error::Config("calibration needs at least one validation query".into()));
    }
    if !(budget >= 0.0) {
        return Err(Error::Param(format!("accuracy budget {budget} must be >= 0")));
    }
    let all: Vec<&GateEvidence> = evidence.iter().collect();
    let tasks: BTreeSet<u32> = evidence.iter().map(|e| e.task_id).collect();
    Ok(match mode {
        GateMode::Nc => CalibrationResult {
            config: GateConfig::nc(),
            flagged_tasks: Vec::new(),
        },
        GateMode::Global => match smallest_within(&all, budget) {
            Some(z) => CalibrationResult {
                config: GateConfig::global(z),
                flagged_tasks: Vec::new(),
            },
            None => CalibrationResult {
                config: GateConfig::all_hard(),
                flagged_tasks: tasks.into_iter().collect(),
            },
        },
        GateMode::PerTask => {
            let mut z_per_task = BTreeMap::new();
            let mut flagged = Vec::new();
            for task in tasks {
                let ev: Vec<&GateEvidence> = evidence.iter().filter(|e| e.task_id == task).collect();
                if loss_at(&ev, 0.5) <= budget + 1e-12 {
                    continue;
                }
                match smallest_within(&ev, budget) {
                    Some(z) => {
                        z_per_task.insert(task, z);
                    }
                    None => {
                        z_per_task.insert(task, 1.0);
                        flagged.push(task);
                    }
                }
            }
            CalibrationResult {
                config: GateConfig::per_task(0.5, z_per_task),
                flagged_tasks: flagged,
            }
        }
    })
}
