//! Row pruning of the answer layers: rows for words that are never a
//! training answer, and rows dominated by near-zero weights.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Category, FlopLedger, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FcOrigin {
    #[serde(rename = "W")]
    W,
    #[serde(rename = "W_E")]
    WE,
}

impl FcOrigin {
    pub fn tensor_name(self) -> &'static str {
        match self {
            FcOrigin::W => "W",
            FcOrigin::WE => "W_E",
        }
    }
}

/// Surviving rows of a `V × d` answer layer and their vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedFc {
    pub rows: Matrix,
    pub important_indices: Vec<usize>,
    pub origin: FcOrigin,
    pub vocab_size: usize,
}

impl PrunedFc {
    pub fn new(rows: Matrix, important_indices: Vec<usize>, origin: FcOrigin, vocab_size: usize) -> Result<Self> {
        if important_indices.is_empty() {
            return Err(Error::Param("pruned layer must keep at least one row".into()));
        }
        if rows.rows() != important_indices.len() {
            return Err(Error::dim("pruned rows", important_indices.len(), rows.rows()));
        }
        if important_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Param("important indices must be strictly increasing".into()));
        }
        if let Some(&last) = important_indices.last() {
            if last >= vocab_size {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    size: vocab_size,
                });
            }
        }
        Ok(PrunedFc {
            rows,
            important_indices,
            origin,
            vocab_size,
        })
    }

    pub fn kept(&self) -> usize {
        self.important_indices.len()
    }

    /// Fraction of rows removed, `(V - R) / V`.
    pub fn pruned_ratio(&self) -> f64 {
        (self.vocab_size - self.kept()) as f64 / self.vocab_size as f64
    }

    pub fn contains(&self, index: usize) -> bool {
        self.important_indices.binary_search(&index).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneParams {
    pub theta_p: f64,
    pub n_p: usize,
}

impl PruneParams {
    pub fn babi() -> Self {
        PruneParams { theta_p: 0.1, n_p: 13 }
    }

    pub fn key_value() -> Self {
        PruneParams {
            theta_p: 0.05,
            n_p: 240,
        }
    }
}

/// Indices in `[0, V)` that are not training labels; the padding index is always included.
pub fn find_unused(train_labels: &BTreeSet<usize>, vocab_size: usize) -> BTreeSet<usize> {
    (0..vocab_size)
        .filter(|i| *i == 0 || !train_labels.contains(i))
        .collect()
}

/// Rows with at least `n_p` entries of magnitude strictly below `theta_p`.
pub fn find_unimportant(w: &Matrix, params: &PruneParams) -> Result<BTreeSet<usize>> {
    if params.n_p > w.cols() {
        return Err(Error::Param(format!(
            "N_p = {} exceeds the row width {}",
            params.n_p,
            w.cols()
        )));
    }
    if !(params.theta_p >= 0.0) {
        return Err(Error::Param(format!("theta_p must be >= 0, got {}", params.theta_p)));
    }
    Ok((0..w.rows())
        .filter(|&r| w.row(r).iter().filter(|x| x.abs() < params.theta_p).count() >= params.n_p)
        .collect())
}

/// Drops the rows in `remove`, except rows listed in `exempt`.
pub fn prune(
    w: &Matrix,
    origin: FcOrigin,
    remove: &BTreeSet<usize>,
    exempt: &BTreeSet<usize>,
) -> Result<PrunedFc> {
    let keep: Vec<usize> = (0..w.rows())
        .filter(|r| !remove.contains(r) || exempt.contains(r))
        .collect();
    if keep.is_empty() {
        return Err(Error::Param("pruning would remove every row".into()));
    }
    PrunedFc::new(w.select_rows(&keep), keep, origin, w.rows())
}

/// Argmax over the kept rows, mapped back to the full vocabulary, plus the
/// pruned logits. Charges `R (2d - 1)` to `fc`.
pub fn pruned_output(p: &PrunedFc, u: &[f64], ledger: &mut FlopLedger) -> Result<(usize, Vec<f64>)> {
    let z = tensor::matvec(&p.rows, u, ledger, Category::Fc)?;
    Ok((p.important_indices[tensor::argmax(&z)], z.into_inner()))
}
