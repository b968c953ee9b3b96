//! Exit criteria. Runs as a plain binary (no libtest harness) and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.
//!
//! Set `HOPGATE_BABI_DIR` to a directory of bAbI en-1k task files to use the
//! real corpus; otherwise a generated corpus for tasks 1, 6 and 20 is used.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::gradcheck::{check_early_head, check_icn, check_model, Worst};
use common::*;
use hopgate::babi::generate::write_corpus;
use hopgate::babi::Sample;
use hopgate::cost::{cc_hop, cc_total, hop_components, CostParams};
use hopgate::eval::{bench, evaluate, run_queries, BenchConfig, Scenario};
use hopgate::gate::{GateConfig, GateMode};
use hopgate::model::{AppMode, HopPolicy, HyperParams, InferenceOptions, Model, Prediction, Tying, Variant};
use hopgate::pipeline::{self, Dataset, IcnSummary, PruneSummary};
use hopgate::prune::PruneParams;
use hopgate::report::RunReport;
use hopgate::tensor::FlopLedger;
use hopgate::train::{calibrate_thresholds, EpochLog, GateEvidence, TrainConfig};
use hopgate::Result;

const TASKS: [u32; 3] = [1, 6, 20];
const SEED: u64 = 1;
const QUESTIONS: usize = 1000;
const D: usize = 40;
const HOPS: usize = 3;
const N_S: usize = 50;
const L1: usize = 32;

/// Accuracy tolerances are in points (percent).
const ZERO_SKIP_THETA: f64 = 0.01;
const ZERO_SKIP_MAX_DELTA: f64 = 0.5;
const ZERO_SKIP_MIN_SKIPPED: f64 = 0.5;
const PRUNE_MIN_RATIO: f64 = 0.5;
const PRUNE_MAX_DELTA: f64 = 0.5;
const ZETA_E_MIN: f64 = 0.9;
const ICN_MIN_VALID: f64 = 0.7;
const FLOP_RATIO_MAX: f64 = 0.7;
const GLOBAL_MAX_LOSS: f64 = 2.0;
const CALIBRATION_BUDGET: f64 = 0.01;
const CROSS_CHECK_MAX_GAP: f64 = 0.01;
const BENCH_INFLATE_NS: usize = 5000;
const BENCH_MIN_ZETA_E: f64 = 0.2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Everything the full-pipeline criteria share.
struct Pipeline {
    data: Dataset,
    /// Trained with early head and ICN, nothing pruned.
    unpruned: Model,
    /// `unpruned` plus the default pruning step.
    model: Model,
    train_logs: Vec<EpochLog>,
    icn: IcnSummary,
    prune: PruneSummary,
    gate: GateConfig,
    global: RunReport,
    seconds: f64,
}

fn corpus_dir() -> Result<(PathBuf, Option<tempfile::TempDir>)> {
    if let Some(dir) = std::env::var_os("HOPGATE_BABI_DIR") {
        return Ok((PathBuf::from(dir), None));
    }
    let tmp = tempfile::tempdir().map_err(|e| hopgate::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    write_corpus(tmp.path(), &TASKS, SEED, QUESTIONS)?;
    Ok((tmp.path().to_path_buf(), Some(tmp)))
}

fn run_pipeline() -> Result<Pipeline> {
    let start = Instant::now();
    let (dir, _guard) = corpus_dir()?;
    let data = Dataset::babi(&dir, &TASKS, N_S, 0.1)?;
    let cfg = TrainConfig {
        seed: SEED,
        ..TrainConfig::baseline()
    };
    let (mut model, train_logs) = pipeline::train_model(&data, data.hyper(D, HOPS), &cfg)?;
    pipeline::fit_fc_e(&mut model, &data, &TrainConfig { seed: SEED, ..TrainConfig::fc_e() })?;
    let icn = pipeline::fit_icn(&mut model, &data, L1, &TrainConfig { seed: SEED, ..TrainConfig::icn() })?;
    let unpruned = model.clone();
    let prune = pipeline::prune_model(&mut model, &data.training_labels(), Some(&PruneParams::babi()), true)?;
    let evidence = GateEvidence::gather(&model, &data.valid, true)?;
    let gate = calibrate_thresholds(&evidence, GateMode::Global, CALIBRATION_BUDGET)?.config;
    let scenario = Scenario {
        use_pruned: true,
        ..Scenario::new("global", gate.clone())
    };
    let global = evaluate(&model, &data.test, &scenario)?;
    Ok(Pipeline {
        data,
        unpruned,
        model,
        train_logs,
        icn,
        prune,
        gate,
        global,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn cost_params(h: &HyperParams, mode: AppMode) -> CostParams {
    CostParams {
        d: h.d as u64,
        v: h.vocab_size as u64,
        n_s: h.n_s as u64,
        n_w: h.n_w as u64,
        m: h.hops as u64,
        variant: h.variant,
        mode,
        ..CostParams::babi(h.n_w as u64)
    }
}

fn ledger_exactness() -> Result<Outcome> {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for d in [8, 40] {
        for n_s in [10, 50] {
            for n_w in [4, 8] {
                for v in [50, 174] {
                    for m in 1..=3 {
                        for variant in [Variant::Conventional, Variant::KeyValue] {
                            let h = match variant {
                                Variant::Conventional => conventional(d, n_s, n_w, v, m),
                                Variant::KeyValue => key_value(d, n_s, n_w, v, m),
                            };
                            let model = random_model(h, 7);
                            let s = random_sample(&h, 3);
                            let modes: &[AppMode] = match variant {
                                Variant::Conventional => &[AppMode::PreEmbedded, AppMode::Interactive],
                                Variant::KeyValue => &[AppMode::PreEmbedded],
                            };
                            for &mode in modes {
                                let o = InferenceOptions {
                                    mode,
                                    ..InferenceOptions::new(HopPolicy::AllHops)
                                };
                                let got = model.forward(&s, &o, None, &mut FlopLedger::new())?.ledger.total();
                                let want = cc_total(&cost_params(&h, mode))?;
                                if got != want {
                                    mismatches.push(format!("{variant:?} {mode:?} d{d} ns{n_s} nw{n_w} V{v} m{m}: {got} != {want}"));
                                }
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let h = conventional(40, 50, 8, 174, 3);
    let worked = random_model(h, 1)
        .forward(&random_sample(&h, 1), &InferenceOptions::new(HopPolicy::AllHops), None, &mut FlopLedger::new())?
        .ledger
        .total();
    let pass = mismatches.is_empty() && worked == 40143;
    Ok(outcome(
        pass,
        format!(
            "{checked} configurations, {} mismatches{}; worked total {worked} (want 40143)",
            mismatches.len(),
            mismatches.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    ))
}

fn hop_identity() -> Result<Outcome> {
    let mut bad = 0;
    let mut checked = 0;
    for d in 1..=64u64 {
        for n_s in 1..=64u64 {
            for variant in [Variant::Conventional, Variant::KeyValue] {
                let modes: &[AppMode] = match variant {
                    Variant::Conventional => &[AppMode::PreEmbedded, AppMode::Interactive],
                    Variant::KeyValue => &[AppMode::PreEmbedded],
                };
                for &mode in modes {
                    let p = CostParams {
                        d,
                        n_s,
                        variant,
                        mode,
                        ..CostParams::babi(8)
                    };
                    if cc_hop(&p)? != hop_components(&p)?.total() {
                        bad += 1;
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(outcome(bad == 0, format!("{checked} (d, n_s, variant, mode) points, {bad} mismatches")))
}

fn gradient_suite() -> Result<Outcome> {
    let mut worst = Worst::default();
    for hops in 1..=3 {
        worst.merge(check_model(&conventional(4, 3, 3, 6, hops), 0..3));
    }
    worst.merge(check_model(
        &HyperParams {
            tying: Tying::HopSpecific,
            ..conventional(3, 3, 2, 5, 2)
        },
        0..3,
    ));
    for hops in 1..=2 {
        worst.merge(check_model(&key_value(4, 4, 2, 6, hops), 0..3));
    }
    worst.merge(check_early_head(9, 5));
    worst.merge(check_icn(21, 4));
    Ok(outcome(
        worst.ok(),
        format!("{} entries, worst relative error {:.2e} ({})", worst.entries, worst.err, worst.at),
    ))
}

fn all_hard_equivalence(p: &Pipeline) -> Result<Outcome> {
    let scenario = Scenario::new("all-hard", GateConfig::all_hard());
    let outcomes = run_queries(&p.unpruned, &p.data.test, &scenario)?;
    let mismatches = outcomes.iter().filter(|o| o.baseline.answer != o.adaptive.answer).count();
    let easy = outcomes.iter().filter(|o| o.adaptive.hops_executed < HOPS).count();
    Ok(outcome(
        mismatches == 0 && easy == 0,
        format!("{} test queries, {mismatches} answer mismatches, {easy} early exits", outcomes.len()),
    ))
}

fn predict_all(model: &Model, samples: &[Sample], opts: &InferenceOptions) -> Result<Vec<Prediction>> {
    samples.iter().map(|s| model.forward(s, opts, None, &mut FlopLedger::new())).collect()
}

fn accuracy_points(preds: &[Prediction], samples: &[Sample]) -> f64 {
    let ok = preds.iter().zip(samples).filter(|(p, s)| p.answer == s.answer).count();
    100.0 * ok as f64 / samples.len() as f64
}

fn zero_skip_soundness(p: &Pipeline) -> Result<Outcome> {
    let model = &p.unpruned;
    let test = &p.data.test;
    let plain = InferenceOptions::new(HopPolicy::AllHops);
    let base = predict_all(model, test, &plain)?;
    let at = |theta: f64| predict_all(model, test, &InferenceOptions { zero_skip: Some(theta), ..plain });
    let zero = at(0.0)?;
    let identical = base.iter().zip(&zero).all(|(a, b)| {
        a.answer == b.answer && a.logits.iter().zip(&b.logits).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let skipped = at(ZERO_SKIP_THETA)?;
    let delta = (accuracy_points(&skipped, test) - accuracy_points(&base, test)).abs();
    let (s, n) = skipped
        .iter()
        .flat_map(|p| &p.trace)
        .fold((0usize, 0usize), |(s, n), t| (s + t.skipped, n + t.n_s));
    let frac = s as f64 / n as f64;
    Ok(outcome(
        identical && delta <= ZERO_SKIP_MAX_DELTA && frac >= ZERO_SKIP_MIN_SKIPPED,
        format!(
            "theta 0 bit-identical: {identical}; theta {ZERO_SKIP_THETA}: accuracy delta {delta:.2} points \
             (max {ZERO_SKIP_MAX_DELTA}), skipped {:.1}% of terms (min {:.0}%)",
            100.0 * frac,
            100.0 * ZERO_SKIP_MIN_SKIPPED
        ),
    ))
}

fn pruning_soundness(p: &Pipeline) -> Result<Outcome> {
    let test = &p.data.test;
    let labels = p.data.training_labels();
    let mut model = p.unpruned.clone();
    let unused = pipeline::prune_model(&mut model, &labels, None, false)?;
    let kept = &model.pruned.as_ref().expect("pruned heads").w;

    let mut changed = 0;
    let mut important = 0;
    let mut deltas = Vec::new();
    for policy in [HopPolicy::AllHops, HopPolicy::OneHop] {
        let full = InferenceOptions::new(policy);
        let base = predict_all(&model, test, &full)?;
        let pruned = predict_all(&model, test, &InferenceOptions { use_pruned: true, ..full })?;
        for (b, q) in base.iter().zip(&pruned) {
            if kept.contains(b.answer) {
                important += 1;
                if b.answer != q.answer {
                    changed += 1;
                }
            }
        }
        deltas.push((accuracy_points(&pruned, test) - accuracy_points(&base, test)).abs());
    }

    let mut magnitude = p.unpruned.clone();
    let params = PruneParams { theta_p: 0.1, n_p: 13 };
    let with_magnitude = pipeline::prune_model(&mut magnitude, &labels, Some(&params), false)?;
    let full = InferenceOptions::new(HopPolicy::AllHops);
    let base = predict_all(&magnitude, test, &full)?;
    let pruned = predict_all(&magnitude, test, &InferenceOptions { use_pruned: true, ..full })?;
    let magnitude_delta = (accuracy_points(&pruned, test) - accuracy_points(&base, test)).abs();

    let unused_delta = deltas.iter().cloned().fold(0.0, f64::max);
    Ok(outcome(
        unused.p_r >= PRUNE_MIN_RATIO
            && changed == 0
            && unused_delta <= PRUNE_MAX_DELTA
            && magnitude_delta <= PRUNE_MAX_DELTA,
        format!(
            "unused rows removed {:.1}% (min {:.0}%), {changed} changes over {important} important-argmax predictions, \
             accuracy delta {unused_delta:.2} points; with theta_p 0.1, N_p 13: {:.1}% removed, delta {magnitude_delta:.2} points \
             (max {PRUNE_MAX_DELTA})",
            100.0 * unused.p_r,
            100.0 * PRUNE_MIN_RATIO,
            100.0 * with_magnitude.p_r
        ),
    ))
}

fn reproduction(p: &Pipeline) -> Result<Outcome> {
    let nc = evaluate(
        &p.model,
        &p.data.test,
        &Scenario {
            use_pruned: true,
            ..Scenario::new("nc", GateConfig::nc())
        },
    )?;
    let zeta = |task: &str| nc.tasks.iter().find(|t| t.task == task).map_or(0.0, |t| t.zeta_e);
    // Share of Easy labels: the zeta_E a perfect classifier would reach.
    let easy_share = |task: &str| {
        nc.tasks
            .iter()
            .find(|t| t.task == task)
            .map_or(0.0, |t| t.zeta_e - t.fp + t.fn_)
    };
    let (z1, z20) = (zeta("1"), zeta("20"));
    let a = z1 >= ZETA_E_MIN && z20 >= ZETA_E_MIN;
    let b = p.icn.valid_accuracy >= ICN_MIN_VALID;
    let g = &p.global.pooled;
    let ratio = g.flops_adaptive_mean / g.flops_baseline_mean;
    let loss = 100.0 * (g.accuracy_baseline - g.accuracy_adaptive);
    let c = ratio <= FLOP_RATIO_MAX && loss <= GLOBAL_MAX_LOSS;
    let train: Vec<&EpochLog> = p.train_logs.iter().filter(|l| l.split == "train").collect();
    let (first, last) = (train.first().map_or(0.0, |l| l.loss), train.last().map_or(0.0, |l| l.loss));
    let learned = first > last;
    let verdict = |x: bool| if x { "ok" } else { "FAIL" };
    Ok(outcome(
        a && b && c && learned,
        format!(
            "(a) NC zeta_E task 1 {z1:.3}, task 20 {z20:.3} (min {ZETA_E_MIN}; Easy-label share {:.3} and {:.3}) {}; \
             (b) ICN validation accuracy {:.3} (min {ICN_MIN_VALID}) {}; \
             (c) global z {:.2}: FLOP ratio {ratio:.3} (max {FLOP_RATIO_MAX}), accuracy loss {loss:.2} points \
             (max {GLOBAL_MAX_LOSS}) {}; train loss {first:.3} -> {last:.3} {}; pipeline {:.0} s",
            easy_share("1"),
            easy_share("20"),
            verdict(a),
            p.icn.valid_accuracy,
            verdict(b),
            p.gate.z_global,
            verdict(c),
            verdict(learned),
            p.seconds
        ),
    ))
}

fn cross_check_agreement(p: &Pipeline) -> Result<Outcome> {
    let c = &p.global.cross_check;
    Ok(outcome(
        c.gap_rel <= CROSS_CHECK_MAX_GAP,
        format!(
            "analytic reduction {:.2}, measured {:.2}, relative gap {:.2e} (max {CROSS_CHECK_MAX_GAP}); P_R {:.3}, zeta_E {:.3}",
            c.analytic_reduction, c.measured_reduction, c.gap_rel, p.prune.p_r, p.global.pooled.zeta_e
        ),
    ))
}

fn wall_clock(p: &Pipeline) -> Result<Outcome> {
    let scenario = Scenario {
        use_pruned: true,
        ..Scenario::new("global", p.gate.clone())
    };
    let cfg = BenchConfig {
        repeat: 5,
        warmup: 1,
        inflate_ns: Some(BENCH_INFLATE_NS),
        limit: Some(60),
    };
    let r = bench(&p.model, &p.data.test, &scenario, &cfg)?;
    let applies = r.zeta_e > BENCH_MIN_ZETA_E;
    let pass = !applies || r.wall_ns_adaptive <= r.wall_ns_baseline;
    Ok(outcome(
        pass,
        format!(
            "n_s {}, {} queries, zeta_E {:.3}{}; median baseline {:.1} ms, adaptive {:.1} ms (ratio {:.3})",
            r.n_s,
            r.queries,
            r.zeta_e,
            if applies { "" } else { " (at most the threshold, check not applicable)" },
            r.wall_ns_baseline as f64 / 1e6,
            r.wall_ns_adaptive as f64 / 1e6,
            r.wall_ns_ratio
        ),
    ))
}

fn report(n: usize, name: &str, result: Result<Outcome>) -> bool {
    let o = result.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    println!("[{}] {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let mut passed = vec![
        report(1, "ledger-formula exactness", ledger_exactness()),
        report(2, "hop cost identity", hop_identity()),
        report(3, "gradient suite", gradient_suite()),
    ];
    match run_pipeline() {
        Ok(p) => {
            passed.push(report(4, "all-hard equivalence", all_hard_equivalence(&p)));
            passed.push(report(5, "zero-skip soundness", zero_skip_soundness(&p)));
            passed.push(report(6, "pruning soundness", pruning_soundness(&p)));
            passed.push(report(7, "desk-scale reproduction", reproduction(&p)));
            passed.push(report(8, "analytic/measured reduction agreement", cross_check_agreement(&p)));
            passed.push(report(9, "wall-clock direction", wall_clock(&p)));
        }
        Err(e) => {
            for (n, name) in [
                (4, "all-hard equivalence"),
                (5, "zero-skip soundness"),
                (6, "pruning soundness"),
                (7, "desk-scale reproduction"),
                (8, "analytic/measured reduction agreement"),
                (9, "wall-clock direction"),
            ] {
                passed.push(report(n, name, Err(hopgate::Error::Config(format!("pipeline failed: {e}")))));
            }
        }
    }
    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", passed.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
