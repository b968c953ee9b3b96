use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{RawSample, Vocab, PAD};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Index grid for the memory contents of one sample.
///
/// For bAbI stories each row is a sentence. For key-value memories each row
/// is a key window and `values` holds the matching value token per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryGrid {
    pub n_s: usize,
    pub n_w: usize,
    pub cells: Vec<usize>,
    pub values: Option<Vec<usize>>,
}

impl StoryGrid {
    pub fn empty(n_s: usize, n_w: usize) -> Self {
        StoryGrid {
            n_s,
            n_w,
            cells: vec![PAD; n_s * n_w],
            values: None,
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.cells[i * self.n_w..(i + 1) * self.n_w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [usize] {
        &mut self.cells[i * self.n_w..(i + 1) * self.n_w]
    }

    pub fn is_padding_row(&self, i: usize) -> bool {
        self.row(i).iter().all(|&w| w == PAD)
            && self.values.as_ref().is_none_or(|v| v[i] == PAD)
    }

    /// Number of leading non-padding rows.
    pub fn used_rows(&self) -> usize {
        (0..self.n_s).take_while(|&i| !self.is_padding_row(i)).count()
    }

    /// Copy with `n_s` grown to `new_n_s` by appending padding rows.
    pub fn inflated(&self, new_n_s: usize) -> StoryGrid {
        let mut g = self.clone();
        if new_n_s > self.n_s {
            g.cells.resize(new_n_s * self.n_w, PAD);
            if let Some(v) = g.values.as_mut() {
                v.resize(new_n_s, PAD);
            }
            g.n_s = new_n_s;
        }
        g
    }

    pub fn max_index(&self) -> usize {
        let cells = self.cells.iter().copied().max().unwrap_or(0);
        let values = self.values.iter().flatten().copied().max().unwrap_or(0);
        cells.max(values)
    }
}

/// A story/query/answer instance encoded against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub story: Arc<StoryGrid>,
    pub query: Vec<usize>,
    pub answer: usize,
    pub task_id: u32,
}

impl Sample {
    pub fn n_s(&self) -> usize {
        self.story.n_s
    }

    pub fn n_w(&self) -> usize {
        self.query.len()
    }
}

fn encode_tokens(tokens: &[String], vocab: &Vocab, n_w: usize, out: &mut [usize]) -> Result<()> {
    for (slot, tok) in out.iter_mut().zip(tokens.iter().take(n_w)) {
        *slot = vocab.lookup(tok)?;
    }
    Ok(())
}

/// Encodes into an `n_s × n_w` grid, keeping the most recent `n_s` sentences
/// and truncating sentences to `n_w` words. Padding is index 0.
pub fn encode(sample: &RawSample, vocab: &Vocab, n_s: usize, n_w: usize) -> Result<Sample> {
    if n_s == 0 || n_w == 0 {
        return Err(Error::Param(format!("n_s and n_w must be >= 1 (got {n_s}, {n_w})")));
    }
    let mut grid = StoryGrid::empty(n_s, n_w);
    let skip = sample.story.len().saturating_sub(n_s);
    for (row, sentence) in sample.story.iter().skip(skip).enumerate() {
        encode_tokens(sentence, vocab, n_w, grid.row_mut(row))?;
    }
    let mut query = vec![PAD; n_w];
    encode_tokens(&sample.query, vocab, n_w, &mut query)?;
    let answer = vocab.lookup(&sample.answer)?;
    if answer == PAD {
        return Err(Error::Param("answer cannot be the padding token".into()));
    }
    Ok(Sample {
        story: Arc::new(grid),
        query,
        answer,
        task_id: sample.task_id,
    })
}

/// Words of a sample, padding removed. Inverse of [`encode`] for in-bounds tokens.
pub fn decode_words(sample: &Sample, vocab: &Vocab) -> (Vec<Vec<String>>, Vec<String>, String) {
    let words = |ids: &[usize]| -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD)
            .filter_map(|&i| vocab.word(i).map(String::from))
            .collect()
    };
    let story = (0..sample.story.n_s)
        .map(|i| words(sample.story.row(i)))
        .filter(|s| !s.is_empty())
        .collect();
    let answer = vocab.word(sample.answer).unwrap_or_default().to_string();
    (story, words(&sample.query), answer)
}

/// Position weighting `l(j, k) = (1 - j/J) - (k/d)(1 - 2j/J)` with 1-based
/// `j ∈ [1, J]`, `k ∈ [1, d]`. Stored as an `n_w × d` matrix.
pub fn positional_encoding(n_w: usize, d: usize) -> Matrix {
    let big_j = n_w as f64;
    let big_d = d as f64;
    Matrix::from_fn(n_w, d, |j0, k0| {
        let j = (j0 + 1) as f64;
        let k = (k0 + 1) as f64;
        (1.0 - j / big_j) - (k / big_d) * (1.0 - 2.0 * j / big_j)
    })
}
