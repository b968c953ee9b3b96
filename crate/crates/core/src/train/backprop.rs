//! Unledgered forward pass with cached activations and its analytic backward pass.

use crate::babi::{Sample, PAD};
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelWeights, Variant};
use crate::tensor::{softmax_raw, Matrix};

/// Gradient buffers laid out like [`ModelWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub embeds: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub r: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros(weights: &ModelWeights) -> Self {
        Grads {
            embeds: weights.embeds.iter().map(|e| vec![0.0; e.data().len()]).collect(),
            w: vec![0.0; weights.w.data().len()],
            r: weights.r.iter().map(|r| vec![0.0; r.data().len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.buffers_mut().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.embeds.iter().chain(std::iter::once(&self.w)).chain(self.r.iter())
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.embeds.iter_mut().chain(std::iter::once(&mut self.w)).chain(self.r.iter_mut())
    }

    pub fn scale(&mut self, a: f64) {
        self.buffers_mut().for_each(|b| b.iter_mut().for_each(|x| *x *= a));
    }

    pub fn norm(&self) -> f64 {
        self.buffers().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// `M v` for row-major `M`.
fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), v)).collect()
}

/// `Mᵀ v`.
fn matvec_t(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (r, &vr) in v.iter().enumerate() {
        axpy(&mut out, vr, m.row(r));
    }
    out
}

/// Sentence/query embedding with optional positional weights.
struct Embedder<'a> {
    pe: Option<&'a Matrix>,
    d: usize,
}

impl Embedder<'_> {
    fn embed(&self, words: &[usize], e: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (j, &w) in words.iter().enumerate() {
            let row = e.row(w);
            match self.pe {
                Some(pe) => {
                    for ((o, p), x) in out.iter_mut().zip(pe.row(j)).zip(row) {
                        *o += p * x;
                    }
                }
                None => axpy(&mut out, 1.0, row),
            }
        }
        out
    }

    fn scatter(&self, words: &[usize], grad: &mut [f64], dv: &[f64]) {
        let d = self.d;
        for (j, &w) in words.iter().enumerate() {
            let g = &mut grad[w * d..(w + 1) * d];
            match self.pe {
                Some(pe) => {
                    for ((gi, p), x) in g.iter_mut().zip(pe.row(j)).zip(dv) {
                        *gi += p * x;
                    }
                }
                None => axpy(g, 1.0, dv),
            }
        }
    }
}

/// Memory rows for one embedding matrix. Padding rows share one vector.
struct StoryEmbedding {
    rows: Vec<Vec<f64>>,
}

struct HopCache {
    a: usize,
    c: usize,
    u: Vec<f64>,
    p: Vec<f64>,
    h: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    story: Vec<Option<StoryEmbedding>>,
    values: Option<Vec<Vec<f64>>>,
    hops: Vec<HopCache>,
    u_final: Vec<f64>,
    logits: Vec<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn u_final(&self) -> &[f64] {
        &self.u_final
    }
}

fn check(hyper: &HyperParams, sample: &Sample) -> Result<()> {
    if sample.story.n_w != hyper.n_w {
        return Err(Error::dim("story width", hyper.n_w, sample.story.n_w));
    }
    let max = sample.story.max_index().max(sample.query.iter().copied().max().unwrap_or(0));
    if max >= hyper.vocab_size || sample.answer >= hyper.vocab_size {
        return Err(Error::IndexOutOfRange {
            index: max.max(sample.answer),
            size: hyper.vocab_size,
        });
    }
    if hyper.variant == Variant::KeyValue && sample.story.values.is_none() {
        return Err(Error::Config("key-value memory without values".into()));
    }
    Ok(())
}

/// Runs `hops` hops and the answer layer `fc` without charging FLOPs.
pub fn forward_cached(
    weights: &ModelWeights,
    hyper: &HyperParams,
    sample: &Sample,
    hops: usize,
    fc: &Matrix,
) -> Result<ForwardCache> {
    check(hyper, sample)?;
    let d = hyper.d;
    let emb = Embedder { pe: weights.pe.as_ref(), d };
    let grid = &sample.story;
    let mut story: Vec<Option<StoryEmbedding>> = (0..weights.embeds.len()).map(|_| None).collect();
    let values = grid
        .values
        .as_ref()
        .filter(|_| hyper.variant == Variant::KeyValue)
        .map(|v| v.iter().map(|&w| weights.embeds[0].row(w).to_vec()).collect::<Vec<_>>());

    let mut u = emb.embed(&sample.query, &weights.embeds[hyper.query_embed()]);
    let mut hop_cache = Vec::with_capacity(hops);
    for k in 1..=hops {
        let (a, c) = hyper.hop_embeds(k);
        for idx in [a, c] {
            if story[idx].is_none() && !(hyper.variant == Variant::KeyValue && idx != a) {
                let e = &weights.embeds[idx];
                let pad = emb.embed(&vec![PAD; grid.n_w], e);
                let rows = (0..grid.n_s)
                    .map(|i| {
                        if hyper.variant == Variant::Conventional && grid.is_padding_row(i) {
                            pad.clone()
                        } else {
                            emb.embed(grid.row(i), e)
                        }
                    })
                    .collect();
                story[idx] = Some(StoryEmbedding { rows });
            }
        }
        let m_in = &story[a].as_ref().expect("embedded above").rows;
        let m_out: &Vec<Vec<f64>> = match &values {
            Some(v) => v,
            None => &story[c].as_ref().expect("embedded above").rows,
        };
        let s: Vec<f64> = m_in.iter().map(|row| dot(row, &u)).collect();
        let p = softmax_raw(&s);
        let mut h = u.clone();
        for (pi, row) in p.iter().zip(m_out) {
            axpy(&mut h, *pi, row);
        }
        let next = match weights.r.get(k - 1) {
            Some(r) => matvec(r, &h),
            None => h.clone(),
        };
        hop_cache.push(HopCache { a, c, u, p, h });
        u = next;
    }
    let logits = matvec(fc, &u);
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("forward logits"));
    }
    Ok(ForwardCache {
        story,
        values,
        hops: hop_cache,
        u_final: u,
        logits,
    })
}

/// Softmax cross-entropy of `logits` against `target` and its gradient.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut q = softmax_raw(logits);
    let loss = -q[target].max(f64::MIN_POSITIVE).ln();
    q[target] -= 1.0;
    (loss, q)
}

/// Adds the gradient of the sample's cross-entropy loss to `grads`.
/// Returns the loss and whether the argmax was correct.
pub fn sample_grads(
    weights: &ModelWeights,
    hyper: &HyperParams,
    sample: &Sample,
    grads: &mut Grads,
) -> Result<(f64, bool)> {
    let cache = forward_cached(weights, hyper, sample, hyper.hops, &weights.w)?;
    let correct = crate::tensor::argmax(&cache.logits) == sample.answer;
    let (loss, dz) = cross_entropy(&cache.logits, sample.answer);
    let d = hyper.d;

    for (r, &dzr) in dz.iter().enumerate() {
        axpy(&mut grads.w[r * d..(r + 1) * d], dzr, &cache.u_final);
    }
    let mut g = matvec_t(&weights.w, &dz);

    let n_s = sample.story.n_s;
    let mut d_story: Vec<Option<Vec<Vec<f64>>>> = (0..weights.embeds.len()).map(|_| None).collect();
    let mut d_values = cache.values.as_ref().map(|v| vec![vec![0.0; d]; v.len()]);

    for (k, hop) in cache.hops.iter().enumerate().rev() {
        let dh = match weights.r.get(k) {
            Some(r) => {
                let gr = &mut grads.r[k];
                for (i, &gi) in g.iter().enumerate() {
                    axpy(&mut gr[i * d..(i + 1) * d], gi, &hop.h);
                }
                matvec_t(r, &g)
            }
            None => g,
        };
        let m_in = &cache.story[hop.a].as_ref().expect("cached").rows;
        let m_out: &Vec<Vec<f64>> = match &cache.values {
            Some(v) => v,
            None => &cache.story[hop.c].as_ref().expect("cached").rows,
        };
        let dp: Vec<f64> = m_out.iter().map(|row| dot(row, &dh)).collect();
        match d_values.as_mut() {
            Some(dv) => {
                for (i, row) in dv.iter_mut().enumerate() {
                    axpy(row, hop.p[i], &dh);
                }
            }
            None => {
                let dm = d_story[hop.c].get_or_insert_with(|| vec![vec![0.0; d]; n_s]);
                for (i, row) in dm.iter_mut().enumerate() {
                    axpy(row, hop.p[i], &dh);
                }
            }
        }
        let pdp: f64 = hop.p.iter().zip(&dp).map(|(a, b)| a * b).sum();
        let mut du = dh.clone();
        let dm_in = d_story[hop.a].get_or_insert_with(|| vec![vec![0.0; d]; n_s]);
        for i in 0..n_s {
            let ds = hop.p[i] * (dp[i] - pdp);
            axpy(&mut du, ds, &m_in[i]);
            axpy(&mut dm_in[i], ds, &hop.u);
        }
        g = du;
    }

    let emb = Embedder { pe: weights.pe.as_ref(), d };
    emb.scatter(&sample.query, &mut grads.embeds[hyper.query_embed()], &g);
    let grid = &sample.story;
    for (idx, dm) in d_story.iter().enumerate() {
        let Some(dm) = dm else { continue };
        let mut pad_sum = vec![0.0; d];
        let mut any_pad = false;
        for (i, row) in dm.iter().enumerate() {
            if hyper.variant == Variant::Conventional && grid.is_padding_row(i) {
                axpy(&mut pad_sum, 1.0, row);
                any_pad = true;
            } else {
                emb.scatter(grid.row(i), &mut grads.embeds[idx], row);
            }
        }
        if any_pad {
            emb.scatter(&vec![PAD; grid.n_w], &mut grads.embeds[idx], &pad_sum);
        }
    }
    if let (Some(dv), Some(vals)) = (d_values, grid.values.as_ref()) {
        for (row, &w) in dv.iter().zip(vals) {
            axpy(&mut grads.embeds[0][w * d..(w + 1) * d], 1.0, row);
        }
    }
    Ok((loss, correct))
}

/// Loss of one sample without gradients.
pub fn sample_loss(weights: &ModelWeights, hyper: &HyperParams, sample: &Sample) -> Result<(f64, bool)> {
    let cache = forward_cached(weights, hyper, sample, hyper.hops, &weights.w)?;
    let correct = crate::tensor::argmax(&cache.logits) == sample.answer;
    Ok((cross_entropy(&cache.logits, sample.answer).0, correct))
}

/// Output key after `hops` hops, for training heads on frozen features.
pub fn hop_features(weights: &ModelWeights, hyper: &HyperParams, sample: &Sample, hops: usize) -> Result<Vec<f64>> {
    Ok(forward_cached(weights, hyper, sample, hops, &weights.w)?.u_final)
}

/// Cross-entropy of `w · u` and its gradient added into `grad` (`V × d`, row-major).
pub fn fc_grads(w: &Matrix, u: &[f64], target: usize, grad: &mut [f64]) -> (f64, bool) {
    let logits = matvec(w, u);
    let correct = crate::tensor::argmax(&logits) == target;
    let (loss, dz) = cross_entropy(&logits, target);
    let d = u.len();
    for (r, &dzr) in dz.iter().enumerate() {
        axpy(&mut grad[r * d..(r + 1) * d], dzr, u);
    }
    (loss, correct)
}
