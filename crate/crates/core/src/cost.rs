//! Closed-form FLOP model: per-operation costs, hop and total complexity,
//! and the computation reduction of gating, pruning and zero-skipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AppMode, Prediction, Route, Variant};
use crate::tensor::FlopLedger;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub d: u64,
    pub v: u64,
    pub n_s: u64,
    pub n_w: u64,
    pub m: u64,
    pub l1: u64,
    pub variant: Variant,
    pub mode: AppMode,
    /// Fraction of queries routed Easy.
    pub zeta_e: f64,
    /// Fraction of answer-layer rows pruned.
    pub p_r: f64,
    pub psi_e: f64,
    pub psi_h: f64,
}

impl CostParams {
    /// bAbI operating point: d = 40, n_s = 50, V = 174, three hops, L1 = 32.
    pub fn babi(n_w: u64) -> Self {
        CostParams {
            d: 40,
            v: 174,
            n_s: 50,
            n_w,
            m: 3,
            l1: 32,
            variant: Variant::Conventional,
            mode: AppMode::PreEmbedded,
            zeta_e: 0.0,
            p_r: 0.0,
            psi_e: 0.0,
            psi_h: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("zeta_e", self.zeta_e),
            ("p_r", self.p_r),
            ("psi_e", self.psi_e),
            ("psi_h", self.psi_h),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Param(format!("{name} = {x} not in [0, 1]")));
            }
        }
        if self.variant == Variant::KeyValue && self.mode == AppMode::Interactive {
            return Err(Error::Unsupported("key-value variant has no interactive cost model".into()));
        }
        Ok(())
    }
}

/// Per-operation costs of one hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopComponents {
    pub inner_product: u64,
    pub softmax: u64,
    pub weighted_sum: u64,
    pub key_sum: u64,
    pub key_gen: u64,
    /// Two story embeddings (input and output memory) in interactive mode.
    pub story_embedding: u64,
}

impl HopComponents {
    pub fn total(&self) -> u64 {
        self.inner_product + self.softmax + self.weighted_sum + self.key_sum + self.key_gen + self.story_embedding
    }
}

pub fn hop_components(p: &CostParams) -> Result<HopComponents> {
    p.validate()?;
    let (d, n_s) = (p.d, p.n_s);
    Ok(HopComponents {
        inner_product: n_s * (2 * d - 1),
        softmax: 13 * n_s - 1,
        weighted_sum: (2 * n_s - 1) * d,
        key_sum: d,
        key_gen: match p.variant {
            Variant::Conventional => 0,
            Variant::KeyValue => 2 * d * d,
        },
        story_embedding: match p.mode {
            AppMode::PreEmbedded => 0,
            AppMode::Interactive => 2 * n_s * (2 * p.n_w - 1) * d,
        },
    })
}

/// Cost of one hop.
pub fn cc_hop(p: &CostParams) -> Result<u64> {
    p.validate()?;
    let (d, n_s) = (p.d, p.n_s);
    Ok(match (p.variant, p.mode) {
        (Variant::Conventional, AppMode::PreEmbedded) => n_s * (4 * d + 12) - 1,
        (Variant::KeyValue, AppMode::PreEmbedded) => n_s * (4 * d + 12) - 1 + 2 * d * d,
        (_, AppMode::Interactive) => n_s * ((4 * p.n_w + 2) * d + 12) - 1,
    })
}

pub fn cc_embed_query(p: &CostParams) -> u64 {
    match p.variant {
        Variant::Conventional => (2 * p.n_w - 1) * p.d,
        Variant::KeyValue => (p.n_w - 1) * p.d,
    }
}

pub fn cc_fc(p: &CostParams) -> u64 {
    p.v * (2 * p.d - 1)
}

/// Query embedding, `m` hops and the final layer.
pub fn cc_total(p: &CostParams) -> Result<u64> {
    Ok(cc_embed_query(p) + p.m * cc_hop(p)? + cc_fc(p))
}

/// Cost of the classifier network with `l1` hidden units.
pub fn icn_overhead(d: u64, l1: u64) -> u64 {
    2 * l1 * (d + 2) + 25
}

/// Computation reduction per query from gating and pruning.
///
/// The interactive form uses a fixed factor 2 on the hop term, i.e. the
/// three-hop network the formula was written for.
pub fn cr(p: &CostParams) -> Result<f64> {
    let hop = cc_hop(p)? as f64;
    let hop_term = match p.mode {
        AppMode::PreEmbedded => p.zeta_e * (p.m.saturating_sub(1)) as f64 * hop,
        AppMode::Interactive => p.zeta_e * 2.0 * hop,
    };
    Ok(hop_term + p.p_r * cc_fc(p) as f64 - icn_overhead(p.d, p.l1) as f64)
}

/// [`cr`] plus the weighted-sum (and, interactively, re-embedding) work
/// removed by zero-skipping.
pub fn cr_zero_skip(p: &CostParams) -> Result<f64> {
    let base = cr(p)?;
    let (d, n_s, n_w) = (p.d as f64, p.n_s as f64, p.n_w as f64);
    let extra = match p.mode {
        AppMode::PreEmbedded => {
            (p.zeta_e * p.psi_e + (1.0 - p.zeta_e) * p.m as f64 * p.psi_h) * ((2.0 * n_s - 1.0) * d)
        }
        AppMode::Interactive => {
            (p.zeta_e * p.psi_e + (1.0 - p.zeta_e) * 3.0 * p.psi_h) * (d * (n_s * (2.0 * n_w + 1.0) - 1.0))
        }
    };
    Ok(base + extra)
}

/// Mean skipped fraction for Easy and Hard queries; `None` when no query took that route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub psi_e: Option<f64>,
    pub psi_h: Option<f64>,
}

/// Easy queries contribute their first hop; Hard queries every hop they ran.
/// Ungated predictions count as Easy when they stopped after one hop.
pub fn measure_psi(predictions: &[Prediction]) -> PsiEstimate {
    let (mut e_sum, mut e_n, mut h_sum, mut h_n) = (0.0, 0usize, 0.0, 0usize);
    for p in predictions {
        let easy = match p.route {
            Route::Easy => true,
            Route::Hard => false,
            Route::Forced => p.hops_executed == 1,
        };
        if easy {
            if let Some(t) = p.trace.first() {
                e_sum += t.skipped as f64 / t.n_s as f64;
                e_n += 1;
            }
        } else {
            for t in &p.trace {
                h_sum += t.skipped as f64 / t.n_s as f64;
                h_n += 1;
            }
        }
    }
    PsiEstimate {
        psi_e: (e_n > 0).then(|| e_sum / e_n as f64),
        psi_h: (h_n > 0).then(|| h_sum / h_n as f64),
    }
}

/// Route-weighted fraction of answer rows skipped by pruned heads.
pub fn effective_pruned_ratio(predictions: &[Prediction], vocab_size: usize) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let kept: usize = predictions.iter().map(|p| p.logits.len()).sum();
    1.0 - kept as f64 / (predictions.len() * vocab_size) as f64
}

pub fn easy_fraction(predictions: &[Prediction]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().filter(|p| p.route == Route::Easy).count() as f64 / predictions.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub queries: usize,
    pub baseline_mean: f64,
    pub adaptive_mean: f64,
    pub measured_reduction: f64,
    pub analytic_reduction: f64,
    pub gap_abs: f64,
    /// `gap_abs / |measured_reduction|` (denominator floored at 1 FLOP).
    pub gap_rel: f64,
}

fn mean_total(ledgers: &[FlopLedger]) -> f64 {
    ledgers.iter().map(|l| l.total() as f64).sum::<f64>() / ledgers.len() as f64
}

/// Compares the measured mean per-query reduction with the analytic one.
/// The zero-skip formula is used whenever a Ψ is non-zero.
pub fn cross_check(baseline: &[FlopLedger], adaptive: &[FlopLedger], analytic: &CostParams) -> Result<CrossCheck> {
    if baseline.is_empty() || baseline.len() != adaptive.len() {
        return Err(Error::dim("cross_check ledgers", baseline.len(), adaptive.len()));
    }
    let baseline_mean = mean_total(baseline);
    let adaptive_mean = mean_total(adaptive);
    let measured = baseline_mean - adaptive_mean;
    let predicted = if analytic.psi_e > 0.0 || analytic.psi_h > 0.0 {
        cr_zero_skip(analytic)?
    } else {
        cr(analytic)?
    };
    let gap_abs = (measured - predicted).abs();
    Ok(CrossCheck {
        queries: baseline.len(),
        baseline_mean,
        adaptive_mean,
        measured_reduction: measured,
        analytic_reduction: predicted,
        gap_abs,
        gap_rel: gap_abs / measured.abs().max(1.0),
    })
}

/// One line of the cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub task: String,
    pub mode: AppMode,
    pub scenario: String,
    pub cc_baseline: f64,
    pub cc_adaptive_measured: f64,
    pub cr_analytic: f64,
    pub gap_rel: f64,
}

pub fn cost_table_csv(rows: &[CostRow]) -> Result<String> {
    crate::report::to_csv(rows)
}
