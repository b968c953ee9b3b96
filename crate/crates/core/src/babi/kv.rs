//! Synthetic key-value corpora for exercising the key-value memory path.
//!
//! A fixed memory of `n_pairs` key windows with one value token each is
//! shared by every query. Each query is a copy of one key with a few tokens
//! replaced; its answer is that key's value. The generator only keeps noisy
//! copies whose unique nearest key (by token overlap) is the source key.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Sample, StoryGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KvSynthConfig {
    pub seed: u64,
    pub n_pairs: usize,
    pub n_w: usize,
    pub vocab_size: usize,
    pub queries_per_pair: usize,
    pub noise_tokens: usize,
}

impl KvSynthConfig {
    pub fn new(seed: u64, n_pairs: usize, n_w: usize, vocab_size: usize) -> Self {
        KvSynthConfig {
            seed,
            n_pairs,
            n_w,
            vocab_size,
            queries_per_pair: 1,
            noise_tokens: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvQuery {
    pub tokens: Vec<usize>,
    pub answer: usize,
    /// Row of the key this query was copied from.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvDataset {
    pub memory: Arc<StoryGrid>,
    pub queries: Vec<KvQuery>,
    pub vocab_size: usize,
}

impl KvDataset {
    pub fn samples(&self) -> Vec<Sample> {
        self.queries
            .iter()
            .map(|q| Sample {
                story: Arc::clone(&self.memory),
                query: q.tokens.clone(),
                answer: q.answer,
                task_id: 0,
            })
            .collect()
    }
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|t| b.contains(t)).count()
}

/// Rows of `memory` whose key shares the most tokens with `query`.
pub fn nearest_keys(memory: &StoryGrid, query: &[usize]) -> Vec<usize> {
    let scores: Vec<usize> = (0..memory.n_s).map(|i| overlap(memory.row(i), query)).collect();
    let best = scores.iter().copied().max().unwrap_or(0);
    (0..memory.n_s).filter(|&i| scores[i] == best).collect()
}

pub fn synth_kv(cfg: &KvSynthConfig) -> Result<KvDataset> {
    if cfg.n_pairs == 0 || cfg.n_w == 0 {
        return Err(Error::Param("n_pairs and n_w must be >= 1".into()));
    }
    if cfg.vocab_size < cfg.n_w + 2 {
        return Err(Error::Param(format!(
            "vocab_size {} too small for key windows of {} tokens",
            cfg.vocab_size, cfg.n_w
        )));
    }
    if cfg.noise_tokens >= cfg.n_w.max(1) && cfg.n_w > 1 {
        return Err(Error::Param("noise_tokens must be smaller than n_w".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tokens: Vec<usize> = (1..cfg.vocab_size).collect();

    let mut grid = StoryGrid::empty(cfg.n_pairs, cfg.n_w);
    let mut seen = std::collections::HashSet::new();
    for i in 0..cfg.n_pairs {
        let key = loop {
            let mut k: Vec<usize> = tokens.choose_multiple(&mut rng, cfg.n_w).copied().collect();
            k.sort_unstable();
            if seen.insert(k.clone()) {
                break k;
            }
        };
        grid.row_mut(i).copy_from_slice(&key);
    }
    let values: Vec<usize> = (0..cfg.n_pairs).map(|_| rng.gen_range(1..cfg.vocab_size)).collect();
    grid.values = Some(values.clone());

    let mut queries = Vec::with_capacity(cfg.n_pairs * cfg.queries_per_pair);
    for src in 0..cfg.n_pairs {
        for _ in 0..cfg.queries_per_pair {
            let q = loop {
                let mut q = grid.row(src).to_vec();
                let noise = if cfg.n_w > 1 { cfg.noise_tokens } else { 0 };
                for _ in 0..noise {
                    let pos = rng.gen_range(0..cfg.n_w);
                    q[pos] = rng.gen_range(1..cfg.vocab_size);
                }
                if nearest_keys(&grid, &q) == [src] || cfg.n_pairs == 1 {
                    break q;
                }
            };
            queries.push(KvQuery {
                tokens: q,
                answer: values[src],
                source: src,
            });
        }
    }
    queries.shuffle(&mut rng);

    Ok(KvDataset {
        memory: Arc::new(grid),
        queries,
        vocab_size: cfg.vocab_size,
    })
}
