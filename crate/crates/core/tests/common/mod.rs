#![allow(dead_code)]

pub mod gradcheck;

use std::sync::Arc;

use hopgate::babi::{Sample, StoryGrid};
use hopgate::gate::IcnWeights;
use hopgate::model::{HyperParams, Model, ModelWeights, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn conventional(d: usize, n_s: usize, n_w: usize, v: usize, hops: usize) -> HyperParams {
    HyperParams {
        d,
        hops,
        ..HyperParams::conventional(v, n_s, n_w)
    }
}

pub fn key_value(d: usize, n_s: usize, n_w: usize, v: usize, hops: usize) -> HyperParams {
    HyperParams {
        hops,
        ..HyperParams::key_value(v, n_s, n_w, d)
    }
}

/// Random weights (std 0.3) plus an early head, ICN and nothing pruned.
pub fn random_model(hyper: HyperParams, seed: u64) -> Model {
    let mut r = rng(seed);
    let weights = ModelWeights::init(&hyper, 0.3, &mut r).unwrap();
    let mut model = Model::new(hyper, weights).unwrap();
    model.w_e = Some(model.weights.w.clone());
    model.icn = Some(IcnWeights::random(model.hyper.d, 8, &mut r));
    model
}

/// Random story and query over the full vocabulary (padding included).
pub fn random_sample(hyper: &HyperParams, seed: u64) -> Sample {
    let mut r = rng(seed ^ 0x5a5a);
    let v = hyper.vocab_size;
    let mut grid = StoryGrid::empty(hyper.n_s, hyper.n_w);
    for c in grid.cells.iter_mut() {
        *c = r.gen_range(0..v);
    }
    if hyper.variant == Variant::KeyValue {
        grid.values = Some((0..hyper.n_s).map(|_| r.gen_range(1..v)).collect());
    }
    Sample {
        story: Arc::new(grid),
        query: (0..hyper.n_w).map(|_| r.gen_range(1..v)).collect(),
        answer: r.gen_range(0..v),
        task_id: 1,
    }
}
