//! Scenario evaluation with measured FLOPs, and wall-clock benchmarking.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::babi::Sample;
use crate::cost::{cr, cr_zero_skip, cross_check, easy_fraction, effective_pruned_ratio, measure_psi, CostParams};
use crate::error::{Error, Result};
use crate::gate::{label_rule, Difficulty, GateConfig};
use crate::model::{AppMode, HopPolicy, InferenceOptions, Model, Prediction, PreparedStory, Route};
use crate::report::{RunReport, TaskReport};
use crate::tensor::FlopLedger;

/// How the adaptive path is run; the baseline always uses every hop, the
/// full answer layer and no zero-skipping in the same application mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub gate: GateConfig,
    pub mode: AppMode,
    pub zero_skip: Option<f64>,
    pub avoid_reembedding: bool,
    pub use_pruned: bool,
    pub force_route: Option<Difficulty>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, gate: GateConfig) -> Self {
        Scenario {
            name: name.into(),
            gate,
            mode: AppMode::PreEmbedded,
            zero_skip: None,
            avoid_reembedding: false,
            use_pruned: false,
            force_route: None,
        }
    }

    pub fn baseline_options(&self) -> InferenceOptions {
        InferenceOptions {
            mode: self.mode,
            ..InferenceOptions::new(HopPolicy::AllHops)
        }
    }

    pub fn adaptive_options(&self) -> InferenceOptions {
        InferenceOptions {
            mode: self.mode,
            zero_skip: self.zero_skip,
            avoid_reembedding: self.avoid_reembedding,
            use_pruned: self.use_pruned,
            force_route: self.force_route,
            ..InferenceOptions::new(HopPolicy::Gated)
        }
    }
}

/// Everything recorded for one query.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub task_id: u32,
    pub answer: usize,
    pub label: Difficulty,
    pub baseline: Prediction,
    pub adaptive: Prediction,
    pub wall_ns_baseline: u128,
    pub wall_ns_adaptive: u128,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, u128)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_nanos()))
}

/// Runs baseline, adaptive and early-exit inference on every sample.
pub fn run_queries(model: &Model, samples: &[Sample], scenario: &Scenario) -> Result<Vec<QueryOutcome>> {
    let base_opts = scenario.baseline_options();
    let adapt_opts = scenario.adaptive_options();
    let one_opts = InferenceOptions::new(HopPolicy::OneHop);
    samples
        .par_iter()
        .map(|s| {
            let mut scratch = FlopLedger::new();
            let (baseline, wall_ns_baseline) = timed(|| model.forward(s, &base_opts, None, &mut scratch))?;
            let (adaptive, wall_ns_adaptive) =
                timed(|| model.forward(s, &adapt_opts, Some(&scenario.gate), &mut scratch))?;
            let early = model.forward(s, &one_opts, None, &mut scratch)?;
            let full_correct = match scenario.mode {
                AppMode::PreEmbedded => baseline.answer == s.answer,
                AppMode::Interactive => {
                    model.forward(s, &InferenceOptions::new(HopPolicy::AllHops), None, &mut scratch)?.answer == s.answer
                }
            };
            Ok(QueryOutcome {
                task_id: s.task_id,
                answer: s.answer,
                label: label_rule(early.answer == s.answer, full_correct),
                baseline,
                adaptive,
                wall_ns_baseline,
                wall_ns_adaptive,
            })
        })
        .collect()
}

/// Closed-form parameters matching `model` with the measured route mix, pruning and skipping.
pub fn analytic_params(model: &Model, outcomes: &[&QueryOutcome], scenario: &Scenario, l1: usize) -> CostParams {
    let h = &model.hyper;
    let adaptive: Vec<Prediction> = outcomes.iter().map(|o| o.adaptive.clone()).collect();
    let n_s = outcomes.first().map_or(h.n_s, |o| o.baseline.trace.first().map_or(h.n_s, |t| t.n_s));
    let psi = measure_psi(&adaptive);
    let skipping = scenario.zero_skip.is_some();
    CostParams {
        d: h.d as u64,
        v: h.vocab_size as u64,
        n_s: n_s as u64,
        n_w: h.n_w as u64,
        m: h.hops as u64,
        l1: l1 as u64,
        variant: h.variant,
        mode: scenario.mode,
        zeta_e: easy_fraction(&adaptive),
        p_r: effective_pruned_ratio(&adaptive, h.vocab_size),
        psi_e: if skipping { psi.psi_e.unwrap_or(0.0) } else { 0.0 },
        psi_h: if skipping { psi.psi_h.unwrap_or(0.0) } else { 0.0 },
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarize(task: String, model: &Model, outcomes: &[&QueryOutcome], scenario: &Scenario, l1: usize) -> Result<TaskReport> {
    let n = outcomes.len() as f64;
    let params = analytic_params(model, outcomes, scenario, l1);
    let base: Vec<FlopLedger> = outcomes.iter().map(|o| o.baseline.ledger.clone()).collect();
    let adapt: Vec<FlopLedger> = outcomes.iter().map(|o| o.adaptive.ledger.clone()).collect();
    let check = cross_check(&base, &adapt, &params)?;
    let frac = |f: &dyn Fn(&QueryOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    Ok(TaskReport {
        task,
        queries: outcomes.len(),
        accuracy_baseline: frac(&|o| o.baseline.answer == o.answer),
        accuracy_adaptive: frac(&|o| o.adaptive.answer == o.answer),
        zeta_e: params.zeta_e,
        fp: frac(&|o| o.adaptive.route == Route::Easy && o.label == Difficulty::Hard),
        fn_: frac(&|o| o.adaptive.route == Route::Hard && o.label == Difficulty::Easy),
        p_r: params.p_r,
        psi_e: params.psi_e,
        psi_h: params.psi_h,
        flops_baseline_mean: check.baseline_mean,
        flops_adaptive_mean: check.adaptive_mean,
        cr_analytic: check.analytic_reduction,
        cr_measured: check.measured_reduction,
        gap_rel: check.gap_rel,
        wall_ns_baseline: mean(outcomes.iter().map(|o| o.wall_ns_baseline as f64)),
        wall_ns_adaptive: mean(outcomes.iter().map(|o| o.wall_ns_adaptive as f64)),
    })
}

/// Evaluates a scenario, reporting each task and the pooled set.
pub fn evaluate(model: &Model, samples: &[Sample], scenario: &Scenario) -> Result<RunReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation needs at least one query".into()));
    }
    let l1 = model
        .icn
        .as_ref()
        .map(|i| i.hidden())
        .ok_or_else(|| Error::Config("evaluation needs trained ICN weights".into()))?;
    let outcomes = run_queries(model, samples, scenario)?;
    let mut by_task: BTreeMap<u32, Vec<&QueryOutcome>> = BTreeMap::new();
    for o in &outcomes {
        by_task.entry(o.task_id).or_default().push(o);
    }
    let tasks = by_task
        .iter()
        .map(|(t, os)| summarize(t.to_string(), model, os, scenario, l1))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&QueryOutcome> = outcomes.iter().collect();
    let pooled = summarize("all".into(), model, &all, scenario, l1)?;
    let params = analytic_params(model, &all, scenario, l1);
    let base: Vec<FlopLedger> = outcomes.iter().map(|o| o.baseline.ledger.clone()).collect();
    let adapt: Vec<FlopLedger> = outcomes.iter().map(|o| o.adaptive.ledger.clone()).collect();
    Ok(RunReport {
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        zero_skip: scenario.zero_skip,
        pruned: scenario.use_pruned,
        tasks,
        pooled,
        cross_check: cross_check(&base, &adapt, &params)?,
    })
}

/// Analytic reduction for the given parameters, picking the zero-skip form when Ψ is set.
pub fn analytic_reduction(p: &CostParams) -> Result<f64> {
    if p.psi_e > 0.0 || p.psi_h > 0.0 {
        cr_zero_skip(p)
    } else {
        cr(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub repeat: usize,
    pub warmup: usize,
    /// Pads every story with empty rows up to this many memory slots.
    pub inflate_ns: Option<usize>,
    pub limit: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repeat: 11,
            warmup: 2,
            inflate_ns: None,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: String,
    pub mode: AppMode,
    pub queries: usize,
    pub n_s: usize,
    pub repeat: usize,
    /// Fraction of timed queries routed Easy.
    pub zeta_e: f64,
    /// Median over repeats of the time to answer every query once.
    pub wall_ns_baseline: u128,
    pub wall_ns_adaptive: u128,
    /// `wall_ns_adaptive / wall_ns_baseline`.
    pub wall_ns_ratio: f64,
    pub flops_baseline_mean: f64,
    pub flops_adaptive_mean: f64,
    pub flop_ratio: f64,
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Single-threaded timing of baseline and adaptive inference.
///
/// Stories are embedded before timing starts in pre-embedded mode.
pub fn bench(model: &Model, samples: &[Sample], scenario: &Scenario, cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.repeat == 0 {
        return Err(Error::Param("bench repeat must be >= 1".into()));
    }
    let take = cfg.limit.unwrap_or(samples.len()).min(samples.len());
    if take == 0 {
        return Err(Error::Config("bench needs at least one query".into()));
    }
    // Evenly spaced so a limit still covers every task in a task-sorted split.
    let queries: Vec<Sample> = (0..take)
        .map(|i| &samples[i * samples.len() / take])
        .map(|s| match cfg.inflate_ns {
            Some(n) => Sample {
                story: Arc::new(s.story.inflated(n)),
                ..s.clone()
            },
            None => s.clone(),
        })
        .collect();
    let prepared: Vec<Option<PreparedStory>> = match scenario.mode {
        AppMode::PreEmbedded => queries.iter().map(|s| model.prepare(&s.story).map(Some)).collect::<Result<_>>()?,
        AppMode::Interactive => vec![None; queries.len()],
    };
    let base_opts = scenario.baseline_options();
    let adapt_opts = scenario.adaptive_options();
    let run = |opts: &InferenceOptions, gate: Option<&GateConfig>, ledger: &mut FlopLedger| -> Result<Vec<Prediction>> {
        queries
            .iter()
            .zip(&prepared)
            .map(|(s, p)| model.forward_prepared(s, p.as_ref(), opts, gate, ledger))
            .collect()
    };
    let gate = Some(&scenario.gate);
    let mut base_flops = FlopLedger::new();
    let mut adapt_flops = FlopLedger::new();
    run(&base_opts, None, &mut base_flops)?;
    let zeta_e = easy_fraction(&run(&adapt_opts, gate, &mut adapt_flops)?);
    let mut scratch = FlopLedger::new();
    for _ in 0..cfg.warmup {
        run(&base_opts, None, &mut scratch)?;
        run(&adapt_opts, gate, &mut scratch)?;
    }
    let (mut tb, mut ta) = (Vec::with_capacity(cfg.repeat), Vec::with_capacity(cfg.repeat));
    for _ in 0..cfg.repeat {
        tb.push(timed(|| run(&base_opts, None, &mut scratch))?.1);
        ta.push(timed(|| run(&adapt_opts, gate, &mut scratch))?.1);
    }
    let (mb, ma) = (median(tb), median(ta));
    let fb = base_flops.total() as f64 / take as f64;
    let fa = adapt_flops.total() as f64 / take as f64;
    Ok(BenchResult {
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        queries: take,
        n_s: queries[0].story.n_s,
        repeat: cfg.repeat,
        zeta_e,
        wall_ns_baseline: mb,
        wall_ns_adaptive: ma,
        wall_ns_ratio: ma as f64 / mb.max(1) as f64,
        flops_baseline_mean: fb,
        flops_adaptive_mean: fa,
        flop_ratio: fa / fb.max(1.0),
    })
}
