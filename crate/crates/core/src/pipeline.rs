//! Stage functions shared by the command line and the test suites:
//! data loading, training stages, labeling, ICN fitting and pruning.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::babi::{load_tasks, Corpus, KvDataset, Sample, Vocab};
use crate::error::{Error, Result};
use crate::gate::{generate_labels, Difficulty};
use crate::model::{HyperParams, Model, PrunedHeads, Variant};
use crate::prune::{find_unimportant, find_unused, prune, FcOrigin, PruneParams};
use crate::train::{self, hop_features, EpochLog, LossSpec, TrainConfig};

/// Encoded train/validation/test splits plus the shapes they were encoded with.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub variant: Variant,
    pub vocab: Option<Vocab>,
    pub vocab_size: usize,
    pub n_s: usize,
    pub n_w: usize,
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    fn from_corpus(c: Corpus) -> Self {
        Dataset {
            variant: Variant::Conventional,
            vocab_size: c.vocab.len(),
            vocab: Some(c.vocab),
            n_s: c.n_s,
            n_w: c.n_w,
            train: c.train,
            valid: c.valid,
            test: c.test,
        }
    }

    /// bAbI task files from `dir`, vocabulary built jointly over train and test.
    pub fn babi(dir: &Path, tasks: &[u32], n_s: usize, valid_fraction: f64) -> Result<Self> {
        let files = load_tasks(dir, tasks)?;
        Ok(Self::from_corpus(Corpus::build(&files, n_s, valid_fraction)?))
    }

    /// bAbI task files encoded against a trained model's vocabulary and shapes.
    pub fn babi_for(model: &Model, dir: &Path, tasks: &[u32], valid_fraction: f64) -> Result<Self> {
        let vocab = model
            .vocab
            .clone()
            .ok_or_else(|| Error::Config("checkpoint has no vocabulary".into()))?;
        let files = load_tasks(dir, tasks)?;
        let h = &model.hyper;
        Ok(Self::from_corpus(Corpus::build_with(&files, vocab, h.n_s, h.n_w, valid_fraction)?))
    }

    /// Key-value queries split 80/10/10 after a seeded shuffle.
    pub fn key_value(data: &KvDataset, seed: u64) -> Self {
        let mut samples = data.samples();
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = samples.len();
        let n_test = n / 10;
        let n_valid = n / 10;
        let test = samples.split_off(n - n_test);
        let valid = samples.split_off(n - n_test - n_valid);
        Dataset {
            variant: Variant::KeyValue,
            vocab: None,
            vocab_size: data.vocab_size,
            n_s: data.memory.n_s,
            n_w: data.memory.n_w,
            train: samples,
            valid,
            test,
        }
    }

    /// Loads a directory of bAbI files or a key-value dataset JSON file.
    pub fn load(path: &Path, tasks: &[u32], n_s: usize, seed: u64) -> Result<Self> {
        if path.is_dir() {
            Self::babi(path, tasks, n_s, 0.1)
        } else {
            let kv: KvDataset = crate::report::read_json(path)?;
            Ok(Self::key_value(&kv, seed))
        }
    }

    /// Loads evaluation data for an existing model.
    pub fn load_for(model: &Model, path: &Path, tasks: &[u32], seed: u64) -> Result<Self> {
        if path.is_dir() {
            Self::babi_for(model, path, tasks, 0.1)
        } else {
            let d = Self::load(path, tasks, model.hyper.n_s, seed)?;
            if d.vocab_size != model.hyper.vocab_size || d.n_w != model.hyper.n_w {
                return Err(Error::Config("key-value data does not match the checkpoint shapes".into()));
            }
            Ok(d)
        }
    }

    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?} (train, valid, test)"))),
        }
    }

    /// Answers seen in training (train and validation parts).
    pub fn training_labels(&self) -> BTreeSet<usize> {
        self.train.iter().chain(&self.valid).map(|s| s.answer).collect()
    }

    pub fn hyper(&self, d: usize, hops: usize) -> HyperParams {
        match self.variant {
            Variant::Conventional => HyperParams {
                d,
                hops,
                ..HyperParams::conventional(self.vocab_size, self.n_s, self.n_w)
            },
            Variant::KeyValue => HyperParams {
                hops,
                ..HyperParams::key_value(self.vocab_size, self.n_s, self.n_w, d)
            },
        }
    }
}

/// Trains the baseline network on the dataset's training split.
pub fn train_model(data: &Dataset, hyper: HyperParams, cfg: &TrainConfig) -> Result<(Model, Vec<EpochLog>)> {
    let (weights, logs) = train::train_baseline(&data.train, &data.valid, &hyper, cfg)?;
    let mut model = Model::new(hyper, weights)?;
    model.vocab = data.vocab.clone();
    Ok((model, logs))
}

/// Trains `W_E` on every training query (train and validation parts).
pub fn fit_fc_e(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    let all: Vec<Sample> = data.train.iter().chain(&data.valid).cloned().collect();
    let (w_e, logs) = train::train_fc_e(model, &all, cfg)?;
    model.w_e = Some(w_e);
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub easy: usize,
    pub hard: usize,
}

impl LabelCounts {
    pub fn of(labels: &[Difficulty]) -> Self {
        let easy = labels.iter().filter(|l| **l == Difficulty::Easy).count();
        LabelCounts {
            easy,
            hard: labels.len() - easy,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcnSummary {
    pub hidden: usize,
    pub class_weights: [f64; 2],
    pub train_labels: LabelCounts,
    pub valid_labels: LabelCounts,
    pub train_accuracy: f64,
    /// Agreement of the ICN's argmax with the validation labels.
    pub valid_accuracy: f64,
    pub single_class: bool,
    pub logs: Vec<EpochLog>,
}

fn features(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| hop_features(&model.weights, &model.hyper, s, 1))
        .collect()
}

/// Labels the training part, fits the ICN with inverse-frequency weighted
/// cross-entropy and scores it on the validation part.
pub fn fit_icn(model: &mut Model, data: &Dataset, hidden: usize, cfg: &TrainConfig) -> Result<IcnSummary> {
    let train_labels = generate_labels(model, &data.train)?;
    let valid_labels = generate_labels(model, &data.valid)?;
    let (weights, _) = train::class_weights(&train_labels);
    let loss = LossSpec::weighted(weights)?;
    let feats = features(model, &data.train)?;
    let result = train::train_icn(&feats, &train_labels, hidden, cfg, &loss)?;
    let icn = result.weights;
    let valid_feats = features(model, &data.valid)?;
    let agree = valid_feats
        .iter()
        .zip(&valid_labels)
        .filter(|(u, l)| {
            let (e, h) = crate::gate::icn_forward(u, &icn, &mut crate::tensor::FlopLedger::new())
                .expect("validated shapes");
            (e > h) == (**l == Difficulty::Easy)
        })
        .count();
    model.icn = Some(icn);
    Ok(IcnSummary {
        hidden,
        class_weights: weights,
        train_labels: LabelCounts::of(&train_labels),
        valid_labels: LabelCounts::of(&valid_labels),
        train_accuracy: result.logs.last().map_or(0.0, |l| l.accuracy),
        valid_accuracy: agree as f64 / valid_labels.len().max(1) as f64,
        single_class: result.single_class,
        logs: result.logs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneSummary {
    pub vocab_size: usize,
    pub unused: usize,
    pub unimportant_w: usize,
    pub unimportant_w_e: usize,
    /// Fraction of unimportant `W` rows that are also unused.
    pub unimportant_overlap_unused: f64,
    pub kept_w: usize,
    pub kept_w_e: Option<usize>,
    pub p_r: f64,
}

/// Builds pruned `W` (and `W_E` when present). `params = None` prunes unused
/// rows only; `exempt_labels` protects training-label rows from the magnitude rule.
pub fn prune_model(
    model: &mut Model,
    labels: &BTreeSet<usize>,
    params: Option<&PruneParams>,
    exempt_labels: bool,
) -> Result<PruneSummary> {
    let v = model.hyper.vocab_size;
    let unused = find_unused(labels, v);
    let exempt = if exempt_labels { labels.clone() } else { BTreeSet::new() };
    let removal = |w: &crate::tensor::Matrix| -> Result<(BTreeSet<usize>, usize)> {
        let unimportant = match params {
            Some(p) => find_unimportant(w, p)?,
            None => BTreeSet::new(),
        };
        let n = unimportant.len();
        Ok((unused.union(&unimportant).copied().collect(), n))
    };
    let (remove_w, unimportant_w) = removal(&model.weights.w)?;
    let overlap = match params {
        Some(p) => {
            let u = find_unimportant(&model.weights.w, p)?;
            if u.is_empty() {
                0.0
            } else {
                u.intersection(&unused).count() as f64 / u.len() as f64
            }
        }
        None => 0.0,
    };
    let w = prune(&model.weights.w, FcOrigin::W, &remove_w, &exempt)?;
    let (w_e, unimportant_w_e) = match &model.w_e {
        Some(w_e) => {
            let (remove, n) = removal(w_e)?;
            (Some(prune(w_e, FcOrigin::WE, &remove, &exempt)?), n)
        }
        None => (None, 0),
    };
    let summary = PruneSummary {
        vocab_size: v,
        unused: unused.len(),
        unimportant_w,
        unimportant_w_e,
        unimportant_overlap_unused: overlap,
        kept_w: w.kept(),
        kept_w_e: w_e.as_ref().map(|p| p.kept()),
        p_r: w.pruned_ratio(),
    };
    model.pruned = Some(PrunedHeads { w, w_e });
    Ok(summary)
}
