mod common;

use common::*;
use hopgate::babi::{positional_encoding, StoryGrid};
use hopgate::cost::{cc_total, CostParams};
use hopgate::gate::{Difficulty, GateConfig};
use hopgate::model::{
    attention_hop, embed_query, embed_story, AppMode, EmbeddedMemory, HopPolicy, HyperParams, InferenceOptions, Tying,
    Variant,
};
use hopgate::tensor::{Category, FlopLedger, Matrix};
use hopgate::Error;
use proptest::prelude::*;
use rand::Rng;

fn opts(policy: HopPolicy) -> InferenceOptions {
    InferenceOptions::new(policy)
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

#[test]
fn ledger_equals_closed_form_on_grid() {
    let mut checked = 0;
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
                                    ..opts(HopPolicy::AllHops)
                                };
                                let mut ledger = FlopLedger::new();
                                let p = model.forward(&s, &o, None, &mut ledger).unwrap();
                                let want = cc_total(&cost_params(&h, mode)).unwrap();
                                assert_eq!(p.ledger.total(), want, "{h:?} {mode:?}");
                                assert_eq!(ledger.total(), want);
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    assert_eq!(checked, 16 * 3 * 3);
}

#[test]
fn worked_totals_pre_embedded_and_interactive() {
    let h = conventional(40, 50, 8, 174, 3);
    let model = random_model(h, 1);
    let s = random_sample(&h, 1);
    let mut l = FlopLedger::new();
    let p = model.forward(&s, &opts(HopPolicy::AllHops), None, &mut l).unwrap();
    assert_eq!(p.ledger.total(), 40143);
    assert_eq!(p.ledger.get(Category::EmbedQuery), 600);
    assert_eq!(p.ledger.get(Category::Fc), 13746);
    assert_eq!(p.ledger.get(Category::EmbedStory), 0);
    let inter = InferenceOptions {
        mode: AppMode::Interactive,
        ..opts(HopPolicy::AllHops)
    };
    let q = model.forward(&s, &inter, None, &mut l).unwrap();
    assert_eq!(q.ledger.total(), 220143);
    assert_eq!(q.ledger.get(Category::EmbedStory), 3 * 2 * 50 * 15 * 40);
    assert_eq!(q.answer, p.answer);
    assert_eq!(q.logits, p.logits);
}

fn random_memory(n_s: usize, d: usize, seed: u64) -> EmbeddedMemory {
    let mut r = rng(seed);
    EmbeddedMemory {
        m_in: Matrix::from_fn(n_s, d, |_, _| r.gen_range(-0.5..0.5)),
        m_out: Matrix::from_fn(n_s, d, |_, _| r.gen_range(-0.5..0.5)),
    }
}

#[test]
fn conventional_hop_costs_8599() {
    let mem = random_memory(50, 40, 2);
    let u = vec![0.1; 40];
    let mut l = FlopLedger::new();
    let (_, tr) = attention_hop(&u, &mem, None, None, &mut l).unwrap();
    assert_eq!(l.total(), 8599);
    assert_eq!(l.total(), 50 * (4 * 40 + 12) - 1);
    assert_eq!(tr.skipped, 0);
    assert!((tr.p_a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn key_value_hop_adds_key_generation() {
    let (d, n_s) = (500, 5000);
    let mem = random_memory(n_s, d, 4);
    let r = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.001 });
    let u = vec![0.01; d];
    let mut l = FlopLedger::new();
    let (u_out, tr) = attention_hop(&u, &mem, None, Some(&r), &mut l).unwrap();
    assert_eq!(l.total(), (n_s * (4 * d + 12) - 1 + 2 * d * d) as u64);
    assert_eq!(l.get(Category::KeyGen), (2 * d * d) as u64);
    let key: Vec<f64> = tr.o.iter().zip(&u).map(|(a, b)| a + b).collect();
    for i in 0..d {
        let want: f64 = (0..d).map(|j| r.get(i, j) * key[j]).sum();
        assert!((u_out[i] - want).abs() < 1e-9);
    }
}

#[test]
fn near_one_hot_attention_skips_all_but_one() {
    let (n_s, d) = (20, 6);
    let mut mem = random_memory(n_s, d, 5);
    let u = vec![1.0; d];
    let hot = 7;
    mem.m_in = Matrix::from_fn(n_s, d, |i, _| if i == hot { 5.0 } else { 0.0 });
    let mut l = FlopLedger::new();
    let (_, tr) = attention_hop(&u, &mem, Some(0.01), None, &mut l).unwrap();
    assert_eq!(tr.skipped, n_s - 1);
    for (o, m) in tr.o.iter().zip(mem.m_out.row(hot)) {
        assert!((o - m).abs() < 1e-9);
    }
    assert_eq!(l.get(Category::WeightedSum), d as u64);
}

#[test]
fn skipping_everything_gives_zero_output() {
    let mem = random_memory(4, 3, 6);
    let u = vec![0.2, -0.1, 0.3];
    let mut l = FlopLedger::new();
    let (u_out, tr) = attention_hop(&u, &mem, Some(1.0), None, &mut l).unwrap();
    assert_eq!(tr.skipped, 4);
    assert_eq!(tr.o, vec![0.0; 3]);
    assert_eq!(u_out.to_vec(), u);
    assert_eq!(l.get(Category::WeightedSum), 0);
}

#[test]
fn hop_rejects_dimension_mismatch() {
    let mem = random_memory(4, 3, 6);
    let err = attention_hop(&[1.0, 2.0], &mem, None, None, &mut FlopLedger::new()).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_threshold_is_bit_identical(seed in 0u64..10_000, hops in 1usize..4) {
        let h = conventional(6, 9, 4, 12, hops);
        let model = random_model(h, seed);
        let s = random_sample(&h, seed);
        let base = InferenceOptions { record_attention: true, ..opts(HopPolicy::AllHops) };
        let zs = InferenceOptions { zero_skip: Some(0.0), ..base };
        let mut l = FlopLedger::new();
        let a = model.forward(&s, &base, None, &mut l).unwrap();
        let b = model.forward(&s, &zs, None, &mut l).unwrap();
        prop_assert_eq!(a.answer, b.answer);
        prop_assert_eq!(&a.logits, &b.logits);
        for (x, y) in a.trace.iter().zip(&b.trace) {
            prop_assert_eq!(&x.o, &y.o);
            prop_assert_eq!(&x.u_out, &y.u_out);
            prop_assert_eq!(y.skipped, 0);
        }
        prop_assert_eq!(a.ledger, b.ledger);
    }

    #[test]
    fn skip_error_is_bounded(seed in 0u64..10_000, theta in 0.0f64..0.3, n_s in 1usize..30) {
        let d = 5;
        let mem = random_memory(n_s, d, seed);
        let u: Vec<f64> = {
            let mut r = rng(seed + 1);
            (0..d).map(|_| r.gen_range(-3.0..3.0)).collect()
        };
        let mut l = FlopLedger::new();
        let (_, exact) = attention_hop(&u, &mem, None, None, &mut l).unwrap();
        let (_, skipped) = attention_hop(&u, &mem, Some(theta), None, &mut l).unwrap();
        let max_m = mem.m_out.data().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let err = exact.o.iter().zip(&skipped.o).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        prop_assert!(err <= theta * max_m * n_s as f64 + 1e-12);
        prop_assert!((exact.p_a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(skipped.skipped <= n_s);
    }

    #[test]
    fn interactive_outputs_match_pre_embedded(seed in 0u64..10_000, theta in proptest::option::of(0.0f64..0.2)) {
        let h = conventional(5, 7, 3, 10, 3);
        let model = random_model(h, seed);
        let s = random_sample(&h, seed);
        let pre = InferenceOptions { zero_skip: theta, ..opts(HopPolicy::AllHops) };
        let inter = InferenceOptions { mode: AppMode::Interactive, ..pre };
        let mut l = FlopLedger::new();
        let a = model.forward(&s, &pre, None, &mut l).unwrap();
        let b = model.forward(&s, &inter, None, &mut l).unwrap();
        prop_assert_eq!(a.answer, b.answer);
        prop_assert_eq!(a.logits, b.logits);
    }
}

#[test]
fn avoiding_reembedding_with_zero_threshold_changes_nothing() {
    let h = conventional(8, 12, 4, 20, 3);
    for seed in 0..20 {
        let model = random_model(h, seed);
        let s = random_sample(&h, seed);
        let plain = InferenceOptions {
            mode: AppMode::Interactive,
            zero_skip: Some(0.0),
            ..opts(HopPolicy::AllHops)
        };
        let avoid = InferenceOptions {
            avoid_reembedding: true,
            ..plain
        };
        let mut l = FlopLedger::new();
        let a = model.forward(&s, &plain, None, &mut l).unwrap();
        let b = model.forward(&s, &avoid, None, &mut l).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.ledger, b.ledger);
    }
}

#[test]
fn avoiding_reembedding_embeds_only_kept_rows() {
    let h = conventional(8, 30, 4, 20, 3);
    let model = random_model(h, 3);
    let s = random_sample(&h, 3);
    let o = InferenceOptions {
        mode: AppMode::Interactive,
        zero_skip: Some(0.04),
        avoid_reembedding: true,
        ..opts(HopPolicy::AllHops)
    };
    let p = model.forward(&s, &o, None, &mut FlopLedger::new()).unwrap();
    let kept = 30 - p.trace[0].skipped;
    assert!(kept < 30);
    let row = ((2 * 4 - 1) * 8) as u64;
    assert_eq!(p.ledger.get(Category::EmbedStory), row * (2 * 30 + 2 * 2 * kept as u64));
}

#[test]
fn single_hop_model_matches_early_exit_with_same_head() {
    let h = conventional(6, 8, 4, 15, 1);
    for seed in 0..25 {
        let model = random_model(h, seed);
        let s = random_sample(&h, seed);
        let mut l = FlopLedger::new();
        let all = model.forward(&s, &opts(HopPolicy::AllHops), None, &mut l).unwrap();
        let one = model.forward(&s, &opts(HopPolicy::OneHop), None, &mut l).unwrap();
        assert_eq!(all.answer, one.answer);
        assert_eq!(one.hops_executed, 1);
    }
}

#[test]
fn early_exit_equals_first_hop_state_through_w() {
    let h = conventional(6, 8, 4, 15, 3);
    for seed in 0..25 {
        let model = random_model(h, seed);
        let s = random_sample(&h, seed);
        let one = model.forward(&s, &opts(HopPolicy::OneHop), None, &mut FlopLedger::new()).unwrap();
        let u2 = model.hop_state(&s, 1).unwrap();
        let logits: Vec<f64> = (0..h.vocab_size)
            .map(|r| model.weights.w.row(r).iter().zip(u2.iter()).map(|(a, b)| a * b).sum())
            .collect();
        for (a, b) in one.logits.iter().zip(&logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forced_hard_route_reproduces_all_hops() {
    let h = conventional(6, 8, 4, 15, 3);
    for seed in 0..25 {
        let model = random_model(h, seed);
        let s = random_sample(&h, seed);
        let mut l = FlopLedger::new();
        let all = model.forward(&s, &opts(HopPolicy::AllHops), None, &mut l).unwrap();
        let gated = model.forward(&s, &opts(HopPolicy::Gated), Some(&GateConfig::all_hard()), &mut l).unwrap();
        let forced = InferenceOptions {
            force_route: Some(Difficulty::Hard),
            ..opts(HopPolicy::Gated)
        };
        let f = model.forward(&s, &forced, Some(&GateConfig::nc()), &mut l).unwrap();
        assert_eq!(all.logits, gated.logits);
        assert_eq!(all.logits, f.logits);
        assert_eq!(gated.hops_executed, 3);
        assert_eq!(gated.ledger.total(), all.ledger.total() + 2 * 8 * (6 + 2) + 25);
    }
}

#[test]
fn gated_without_gate_is_a_configuration_error() {
    let h = conventional(6, 8, 4, 15, 3);
    let mut model = random_model(h, 0);
    let s = random_sample(&h, 0);
    let err = model.forward(&s, &opts(HopPolicy::Gated), None, &mut FlopLedger::new()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    model.icn = None;
    let err = model
        .forward(&s, &opts(HopPolicy::Gated), Some(&GateConfig::nc()), &mut FlopLedger::new())
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    model.w_e = None;
    let err = model.forward(&s, &opts(HopPolicy::OneHop), None, &mut FlopLedger::new()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn key_value_interactive_is_unsupported() {
    let h = key_value(6, 8, 3, 15, 2);
    let model = random_model(h, 0);
    let s = random_sample(&h, 0);
    let o = InferenceOptions {
        mode: AppMode::Interactive,
        ..opts(HopPolicy::AllHops)
    };
    assert!(matches!(
        model.forward(&s, &o, None, &mut FlopLedger::new()),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn out_of_vocabulary_index_is_rejected() {
    let h = conventional(6, 8, 4, 15, 3);
    let model = random_model(h, 0);
    let mut s = random_sample(&h, 0);
    s.query[0] = 15;
    assert!(matches!(
        model.forward(&s, &opts(HopPolicy::AllHops), None, &mut FlopLedger::new()),
        Err(Error::IndexOutOfRange { index: 15, size: 15 })
    ));
}

#[test]
fn hop_specific_tying_uses_separate_memories() {
    let h = HyperParams {
        tying: Tying::HopSpecific,
        ..conventional(6, 8, 4, 15, 3)
    };
    assert_eq!(h.embed_count(), 7);
    let model = random_model(h, 2);
    let s = random_sample(&h, 2);
    let p = model.forward(&s, &opts(HopPolicy::AllHops), None, &mut FlopLedger::new()).unwrap();
    assert_eq!(p.ledger.total(), cc_total(&cost_params(&h, AppMode::PreEmbedded)).unwrap());
}

#[test]
fn story_embedding_matches_naive_loops() {
    let (n_s, n_w, d, v) = (3, 4, 5, 9);
    let mut r = rng(11);
    let e = Matrix::from_fn(v, d, |_, _| r.gen_range(-1.0..1.0));
    let pe = positional_encoding(n_w, d);
    let mut grid = StoryGrid::empty(n_s, n_w);
    for c in grid.cells.iter_mut() {
        *c = r.gen_range(0..v);
    }
    let mut l = FlopLedger::new();
    let m = embed_story(&grid, &e, &pe, &mut l).unwrap();
    for i in 0..n_s {
        for k in 0..d {
            let mut want = 0.0;
            for j in 0..n_w {
                want += pe.get(j, k) * e.get(grid.row(i)[j], k);
            }
            assert!((m.get(i, k) - want).abs() < 1e-12);
        }
    }
    assert_eq!(l.get(Category::EmbedStory), (n_s * (2 * n_w - 1) * d) as u64);
}

#[test]
fn story_embedding_degenerate_cases() {
    let d = 4;
    let mut e = Matrix::from_fn(6, d, |i, j| (i * 10 + j) as f64);
    let pe = positional_encoding(3, d);
    let zero_row = Matrix::from_fn(6, d, |i, j| if i == 0 { 0.0 } else { e.get(i, j) });
    e = zero_row;
    let m = embed_story(&StoryGrid::empty(2, 3), &e, &pe, &mut FlopLedger::new()).unwrap();
    assert!(m.data().iter().all(|&x| x == 0.0));

    let ones = Matrix::from_fn(1, d, |_, _| 1.0);
    let mut g = StoryGrid::empty(1, 1);
    g.cells[0] = 4;
    let m = embed_story(&g, &e, &ones, &mut FlopLedger::new()).unwrap();
    assert_eq!(m.row(0), e.row(4));
}

#[test]
fn query_embedding_cases() {
    let d = 3;
    let e = Matrix::from_fn(5, d, |i, j| if i == 0 { 0.0 } else { (i + j) as f64 });
    let ones = Matrix::from_fn(1, d, |_, _| 1.0);
    let u = embed_query(&[2], &e, Some(&ones), &mut FlopLedger::new()).unwrap();
    assert_eq!(&*u, e.row(2));

    let mut l = FlopLedger::new();
    let u = embed_query(&[1, 3], &e, None, &mut l).unwrap();
    let want: Vec<f64> = e.row(1).iter().zip(e.row(3)).map(|(a, b)| a + b).collect();
    assert_eq!(u.to_vec(), want);
    assert_eq!(l.get(Category::EmbedQuery), d as u64);

    let pe = positional_encoding(3, d);
    let mut l = FlopLedger::new();
    let a = embed_query(&[2, 4, 0], &e, Some(&pe), &mut l).unwrap();
    let pe2 = Matrix::from_fn(2, d, |i, j| pe.get(i, j));
    let b = embed_query(&[2, 4], &e, Some(&pe2), &mut FlopLedger::new()).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-15);
    }
    assert!(matches!(
        embed_query(&[9], &e, None, &mut FlopLedger::new()),
        Err(Error::IndexOutOfRange { .. })
    ));
}
