//! Central finite differences against analytic gradients.

use hopgate::gate::{Difficulty, IcnWeights};
use hopgate::model::{HyperParams, ModelWeights};
use hopgate::tensor::Matrix;
use hopgate::train::{fc_grads, icn_grads, icn_loss, sample_grads, sample_loss, Grads, IcnGrads, LossSpec};
use rand::Rng;

use super::{random_model, random_sample, rng};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Relative error with the denominator floored at 1e-6, below which central
/// differences are dominated by rounding (about 1e-11 here).
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error seen and where.
#[derive(Debug, Clone, Default)]
pub struct Worst {
    pub err: f64,
    pub at: String,
    pub entries: usize,
}

impl Worst {
    fn record(&mut self, a: f64, n: f64, at: impl FnOnce() -> String) {
        let e = rel_err(a, n);
        self.entries += 1;
        if e > self.err || !e.is_finite() {
            self.err = if e.is_finite() { e } else { f64::INFINITY };
            self.at = format!("{} analytic {a} numeric {n}", at());
        }
    }

    pub fn merge(&mut self, other: Worst) {
        self.entries += other.entries;
        if other.err > self.err {
            self.err = other.err;
            self.at = other.at;
        }
    }

    pub fn ok(&self) -> bool {
        self.err < TOL
    }
}

pub fn with_entry(m: &Matrix, i: usize, delta: f64) -> Matrix {
    let mut data = m.data().to_vec();
    data[i] += delta;
    Matrix::new(m.rows(), m.cols(), data).unwrap()
}

#[derive(Clone, Copy, Debug)]
enum Tensor {
    Embed(usize),
    W,
    R(usize),
}

fn get(w: &ModelWeights, t: Tensor) -> &Matrix {
    match t {
        Tensor::Embed(k) => &w.embeds[k],
        Tensor::W => &w.w,
        Tensor::R(k) => &w.r[k],
    }
}

fn perturbed(w: &ModelWeights, t: Tensor, i: usize, delta: f64) -> ModelWeights {
    let mut out = w.clone();
    let m = with_entry(get(w, t), i, delta);
    match t {
        Tensor::Embed(k) => out.embeds[k] = m,
        Tensor::W => out.w = m,
        Tensor::R(k) => out.r[k] = m,
    }
    out
}

fn analytic(g: &Grads, t: Tensor) -> &[f64] {
    match t {
        Tensor::Embed(k) => &g.embeds[k],
        Tensor::W => &g.w,
        Tensor::R(k) => &g.r[k],
    }
}

/// Every entry of every embedding, `W` and `R` on random models.
pub fn check_model(hyper: &HyperParams, seeds: std::ops::Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let model = random_model(*hyper, seed);
        let w = &model.weights;
        let s = random_sample(hyper, seed + 100);
        let mut g = Grads::zeros(w);
        sample_grads(w, hyper, &s, &mut g).unwrap();
        let mut tensors: Vec<Tensor> = (0..w.embeds.len()).map(Tensor::Embed).collect();
        tensors.push(Tensor::W);
        tensors.extend((0..w.r.len()).map(Tensor::R));
        for t in tensors {
            let a = analytic(&g, t);
            for i in 0..a.len() {
                let lp = sample_loss(&perturbed(w, t, i, H), hyper, &s).unwrap().0;
                let lm = sample_loss(&perturbed(w, t, i, -H), hyper, &s).unwrap().0;
                worst.record(a[i], (lp - lm) / (2.0 * H), || format!("{t:?}[{i}] seed {seed}"));
            }
        }
    }
    worst
}

/// Early answer layer on random first-hop states.
pub fn check_early_head(seed: u64, trials: usize) -> Worst {
    let mut r = rng(seed);
    let mut worst = Worst::default();
    for _ in 0..trials {
        let w = Matrix::from_fn(6, 4, |_, _| r.gen_range(-1.0..1.0));
        let u: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let target = r.gen_range(0..6);
        let mut g = vec![0.0; 24];
        fc_grads(&w, &u, target, &mut g);
        let mut scratch = vec![0.0; 24];
        for i in 0..24 {
            let lp = fc_grads(&with_entry(&w, i, H), &u, target, &mut scratch).0;
            let lm = fc_grads(&with_entry(&w, i, -H), &u, target, &mut scratch).0;
            worst.record(g[i], (lp - lm) / (2.0 * H), || format!("W_E[{i}]"));
        }
    }
    worst
}

/// ICN parameters under both the plain and a class-weighted loss.
pub fn check_icn(seed: u64, trials: usize) -> Worst {
    let mut r = rng(seed);
    let mut worst = Worst::default();
    for loss in [LossSpec::unweighted(), LossSpec::weighted([0.4, 1.6]).unwrap()] {
        for trial in 0..trials {
            let icn = IcnWeights::random(4, 5, &mut r);
            let u: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
            let label = if trial % 2 == 0 { Difficulty::Easy } else { Difficulty::Hard };
            let mut g = IcnGrads::zeros(&icn);
            icn_grads(&icn, &u, label, &loss, &mut g);
            let fd = |f: &dyn Fn(f64) -> IcnWeights| {
                (icn_loss(&f(H), &u, label, &loss) - icn_loss(&f(-H), &u, label, &loss)) / (2.0 * H)
            };
            for i in 0..g.w1.len() {
                let n = fd(&|h| IcnWeights { w1: with_entry(&icn.w1, i, h), ..icn.clone() });
                worst.record(g.w1[i], n, || format!("W1[{i}]"));
            }
            for i in 0..g.b1.len() {
                let n = fd(&|h| {
                    let mut c = icn.clone();
                    c.b1[i] += h;
                    c
                });
                worst.record(g.b1[i], n, || format!("b1[{i}]"));
            }
            for i in 0..g.w2.len() {
                let n = fd(&|h| IcnWeights { w2: with_entry(&icn.w2, i, h), ..icn.clone() });
                worst.record(g.w2[i], n, || format!("W2[{i}]"));
            }
            for i in 0..2 {
                let n = fd(&|h| {
                    let mut c = icn.clone();
                    c.b2[i] += h;
                    c
                });
                worst.record(g.b2[i], n, || format!("b2[{i}]"));
            }
        }
    }
    worst
}
