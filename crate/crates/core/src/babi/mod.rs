//! bAbI ingestion: parsing, vocabulary, encoding, positional encoding, and
//! synthetic corpora.

mod encode;
pub mod generate;
pub mod kv;
mod parse;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encode::{decode_words, encode, positional_encoding, Sample, StoryGrid};
pub use kv::{synth_kv, KvDataset, KvQuery, KvSynthConfig};
pub use parse::{parse_babi, tokenize, RawSample};
pub use vocab::{build_vocab, Vocab, PAD, PAD_TOKEN};

use crate::error::{Error, Result};

/// Parsed train and test files of one task.
#[derive(Debug, Clone)]
pub struct TaskFiles {
    pub task_id: u32,
    pub train: Vec<RawSample>,
    pub test: Vec<RawSample>,
}

fn find_task_file(dir: &Path, task: u32, split: &str) -> Result<std::path::PathBuf> {
    let prefix = format!("qa{task}_");
    let suffix = format!("_{split}.txt");
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(&prefix) && name.ends_with(&suffix) {
            found.push(entry.path());
        }
    }
    found.sort();
    found.into_iter().next().ok_or_else(|| {
        Error::Config(format!("no {prefix}*{suffix} file in {}", dir.display()))
    })
}

fn read_task_file(path: &Path, task: u32) -> Result<Vec<RawSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_babi(&text, task).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Loads `qa{K}_*_{train,test}.txt` for each requested task.
pub fn load_tasks(dir: &Path, tasks: &[u32]) -> Result<Vec<TaskFiles>> {
    tasks
        .iter()
        .map(|&task| {
            Ok(TaskFiles {
                task_id: task,
                train: read_task_file(&find_task_file(dir, task, "train")?, task)?,
                test: read_task_file(&find_task_file(dir, task, "test")?, task)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub task_id: u32,
    pub n_samples: usize,
    pub n_s_max: usize,
    pub n_w_max: usize,
    pub vocab_size: usize,
}

fn max_sentence_len(samples: &[RawSample]) -> usize {
    samples
        .iter()
        .flat_map(|s| s.story.iter().map(Vec::len).chain(std::iter::once(s.query.len())))
        .max()
        .unwrap_or(1)
}

pub fn summarize(task: &TaskFiles, vocab: &Vocab) -> DatasetSummary {
    let all: Vec<RawSample> = task.train.iter().chain(&task.test).cloned().collect();
    DatasetSummary {
        task_id: task.task_id,
        n_samples: all.len(),
        n_s_max: all.iter().map(|s| s.story.len()).max().unwrap_or(0),
        n_w_max: max_sentence_len(&all),
        vocab_size: vocab.len(),
    }
}

/// Encoded joint dataset. `valid` is the last `valid_fraction` of each
/// task's training file; `train` is the rest.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub n_s: usize,
    pub n_w: usize,
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Corpus {
    pub fn build(tasks: &[TaskFiles], n_s: usize, valid_fraction: f64) -> Result<Corpus> {
        if !(0.0..1.0).contains(&valid_fraction) {
            return Err(Error::Param(format!("valid_fraction {valid_fraction} not in [0, 1)")));
        }
        let all: Vec<RawSample> = tasks
            .iter()
            .flat_map(|t| t.train.iter().chain(&t.test).cloned())
            .collect();
        if all.is_empty() {
            return Err(Error::Config("no samples loaded".into()));
        }
        let vocab = build_vocab(&all);
        let n_w = max_sentence_len(&all);
        Self::build_with(tasks, vocab, n_s, n_w, valid_fraction)
    }

    /// Encodes against an existing vocabulary and sentence width.
    pub fn build_with(
        tasks: &[TaskFiles],
        vocab: Vocab,
        n_s: usize,
        n_w: usize,
        valid_fraction: f64,
    ) -> Result<Corpus> {
        let enc = |raw: &[RawSample]| -> Result<Vec<Sample>> {
            raw.iter().map(|r| encode(r, &vocab, n_s, n_w)).collect()
        };
        let mut train = Vec::new();
        let mut valid = Vec::new();
        let mut test = Vec::new();
        for t in tasks {
            let n_valid = (t.train.len() as f64 * valid_fraction).round() as usize;
            let split = t.train.len() - n_valid;
            train.extend(enc(&t.train[..split])?);
            valid.extend(enc(&t.train[split..])?);
            test.extend(enc(&t.test)?);
        }
        Ok(Corpus {
            vocab,
            n_s,
            n_w,
            train,
            valid,
            test,
        })
    }

    /// Answer ids seen in the training files (train and validation parts).
    pub fn training_labels(&self) -> std::collections::BTreeSet<usize> {
        self.train.iter().chain(&self.valid).map(|s| s.answer).collect()
    }
}
