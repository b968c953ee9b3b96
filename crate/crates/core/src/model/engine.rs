use serde::{Deserialize, Serialize};

use super::{AppMode, Model, Variant};
use crate::babi::{Sample, StoryGrid};
use crate::error::{Error, Result};
use crate::gate::{decide_route, icn_forward, Difficulty, GateConfig};
use crate::prune::{pruned_output, PrunedFc};
use crate::tensor::{self, Category, FlopLedger, Matrix, Vector};

/// Input and output memories for one hop, one row per memory slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedMemory {
    pub m_in: Matrix,
    pub m_out: Matrix,
}

impl EmbeddedMemory {
    pub fn slots(&self) -> usize {
        self.m_in.rows()
    }
}

/// Position-weighted bag of words of one grid row.
///
/// The first word costs `d` (element-wise product), every further word `2d`.
fn embed_row_pe(
    words: &[usize],
    e: &Matrix,
    pe: &Matrix,
    ledger: &mut FlopLedger,
    category: Category,
) -> Result<Vector> {
    check_index(words, e.rows())?;
    let mut acc = tensor::hadamard(pe.row(0), e.row(words[0]), ledger, category)?.into_inner();
    for (j, &w) in words.iter().enumerate().skip(1) {
        tensor::hadamard_acc(&mut acc, pe.row(j), e.row(w), ledger, category)?;
    }
    Ok(Vector::from_raw(acc))
}

/// Plain bag of words: `(n_w - 1) d`.
fn embed_row_bow(words: &[usize], e: &Matrix, ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    check_index(words, e.rows())?;
    let mut acc = e.row(words[0]).to_vec();
    for &w in &words[1..] {
        tensor::add_assign(&mut acc, e.row(w), ledger, category)?;
    }
    Ok(Vector::from_raw(acc))
}

fn check_index(words: &[usize], v: usize) -> Result<()> {
    match words.iter().find(|&&w| w >= v) {
        Some(&w) => Err(Error::IndexOutOfRange { index: w, size: v }),
        None if words.is_empty() => Err(Error::dim("sentence", 1, 0)),
        None => Ok(()),
    }
}

fn stack(rows: Vec<Vector>, d: usize) -> Matrix {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * d);
    for r in rows {
        data.extend_from_slice(&r);
    }
    Matrix::new(n, d, data).expect("stacked rows are consistent")
}

/// Embeds every sentence of `grid` with `e` and positional encoding `pe`,
/// charging `n_s (2 n_w - 1) d` to `embed_story`. Row `i` is sentence `i`.
pub fn embed_story(grid: &StoryGrid, e: &Matrix, pe: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
    let rows: Vec<usize> = (0..grid.n_s).collect();
    embed_story_rows(grid, &rows, e, pe, ledger)
}

/// Like [`embed_story`] restricted to the listed rows.
pub fn embed_story_rows(
    grid: &StoryGrid,
    rows: &[usize],
    e: &Matrix,
    pe: &Matrix,
    ledger: &mut FlopLedger,
) -> Result<Matrix> {
    if pe.rows() != grid.n_w || pe.cols() != e.cols() {
        return Err(Error::dim("positional encoding", grid.n_w * e.cols(), pe.rows() * pe.cols()));
    }
    let out = rows
        .iter()
        .map(|&i| embed_row_pe(grid.row(i), e, pe, ledger, Category::EmbedStory))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(out, e.cols()))
}

/// Query embedding `u`: PE-weighted when `pe` is given, plain bag of words otherwise.
pub fn embed_query(query: &[usize], e: &Matrix, pe: Option<&Matrix>, ledger: &mut FlopLedger) -> Result<Vector> {
    match pe {
        Some(pe) => {
            if pe.rows() != query.len() {
                return Err(Error::dim("embed_query", pe.rows(), query.len()));
            }
            embed_row_pe(query, e, pe, ledger, Category::EmbedQuery)
        }
        None => embed_row_bow(query, e, ledger, Category::EmbedQuery),
    }
}

/// Per-hop record of the attention computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopTrace {
    /// Match scores; empty unless tracing was requested.
    pub k: Vec<f64>,
    /// Attention probabilities; empty unless tracing was requested.
    pub p_a: Vec<f64>,
    pub o: Vec<f64>,
    pub u_out: Vec<f64>,
    /// Slots whose weighted-sum term was not computed, out of `n_s`.
    pub skipped: usize,
    pub n_s: usize,
}

/// One attention hop.
///
/// With `theta_zs` set, only slots with `p_i >= theta_zs` contribute to `o`
/// (and are charged). With `r` set the output key is `R (o + u)`.
pub fn attention_hop(
    u: &[f64],
    mem: &EmbeddedMemory,
    theta_zs: Option<f64>,
    r: Option<&Matrix>,
    ledger: &mut FlopLedger,
) -> Result<(Vector, HopTrace)> {
    hop_over(u, &mem.m_in, &mem.m_out, theta_zs, r, ledger)
}

fn hop_over(
    u: &[f64],
    m_in: &Matrix,
    m_out: &Matrix,
    theta_zs: Option<f64>,
    r: Option<&Matrix>,
    ledger: &mut FlopLedger,
) -> Result<(Vector, HopTrace)> {
    let d = u.len();
    if m_in.cols() != d || m_out.cols() != d || m_in.rows() != m_out.rows() {
        return Err(Error::dim("attention_hop", d, m_in.cols()));
    }
    let n = m_in.rows();
    let k = tensor::matvec(m_in, u, ledger, Category::InnerProduct)?;
    let p = tensor::softmax(&k, ledger)?;

    let mut o: Option<Vec<f64>> = None;
    let mut kept = 0;
    for i in 0..n {
        if theta_zs.is_some_and(|t| p[i] < t) {
            continue;
        }
        kept += 1;
        match o.as_mut() {
            None => o = Some(tensor::scale(p[i], m_out.row(i), ledger, Category::WeightedSum)?.into_inner()),
            Some(acc) => tensor::axpy(acc, p[i], m_out.row(i), ledger, Category::WeightedSum)?,
        }
    }
    let o = o.unwrap_or_else(|| vec![0.0; d]);
    let key = tensor::add(&o, u, ledger, Category::KeySum)?;
    let u_out = match r {
        Some(r) => tensor::matvec_acc(r, &key, ledger, Category::KeyGen)?,
        None => key,
    };
    let trace = HopTrace {
        k: k.into_inner(),
        p_a: p.into_inner(),
        o,
        u_out: u_out.to_vec(),
        skipped: n - kept,
        n_s: n,
    };
    Ok((u_out, trace))
}

/// How many hops to run and which head answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopPolicy {
    AllHops,
    /// Hop 1 then the early head `W_E`.
    OneHop,
    /// Hop 1, then the ICN decides between the early head and the remaining hops.
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Easy,
    Hard,
    /// No gate consulted; the policy fixed the path.
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub policy: HopPolicy,
    pub zero_skip: Option<f64>,
    pub mode: AppMode,
    /// Interactive mode only: hops after the first embed only the slots kept in hop 1.
    pub avoid_reembedding: bool,
    /// Answer with the pruned heads instead of the full ones.
    pub use_pruned: bool,
    /// Record `k` and `p_a` in the trace.
    pub record_attention: bool,
    /// Gated policy only: override the gate's decision (the ICN still runs and is charged).
    pub force_route: Option<Difficulty>,
}

impl InferenceOptions {
    pub fn new(policy: HopPolicy) -> Self {
        InferenceOptions {
            policy,
            zero_skip: None,
            mode: AppMode::PreEmbedded,
            avoid_reembedding: false,
            use_pruned: false,
            record_attention: false,
            force_route: None,
        }
    }
}

/// Answer head selected for the final layer.
#[derive(Debug, Clone, Copy)]
pub enum FcHead<'a> {
    Full(&'a Matrix),
    Pruned(&'a PrunedFc),
}

impl FcHead<'_> {
    /// Returns `(answer, logits)`; the answer is a full-vocabulary index.
    pub fn apply(&self, u: &[f64], ledger: &mut FlopLedger) -> Result<(usize, Vec<f64>)> {
        match self {
            FcHead::Full(w) => {
                let z = tensor::matvec(w, u, ledger, Category::Fc)?;
                Ok((tensor::argmax(&z), z.into_inner()))
            }
            FcHead::Pruned(p) => pruned_output(p, u, ledger),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: usize,
    pub logits: Vec<f64>,
    pub route: Route,
    pub hops_executed: usize,
    /// FLOPs charged by this call alone.
    pub ledger: FlopLedger,
    pub trace: Vec<HopTrace>,
    pub icn_probs: Option<(f64, f64)>,
}

/// Story memories embedded ahead of time (uncharged), indexed by embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStory {
    embedded: Vec<Matrix>,
    values: Option<Matrix>,
}

impl PreparedStory {
    fn memory(&self, model: &Model, hop: usize) -> (&Matrix, &Matrix) {
        let (a, c) = model.hyper.hop_embeds(hop);
        match &self.values {
            Some(v) => (&self.embedded[a], v),
            None => (&self.embedded[a], &self.embedded[c]),
        }
    }

    /// Memories used by 1-based hop `hop`.
    pub fn hop_memory(&self, model: &Model, hop: usize) -> EmbeddedMemory {
        let (m_in, m_out) = self.memory(model, hop);
        EmbeddedMemory {
            m_in: m_in.clone(),
            m_out: m_out.clone(),
        }
    }
}

impl Model {
    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let h = &self.hyper;
        if sample.story.n_w != h.n_w {
            return Err(Error::dim("story width", h.n_w, sample.story.n_w));
        }
        if sample.story.n_s == 0 {
            return Err(Error::dim("story rows", 1, 0));
        }
        if h.variant == Variant::Conventional && sample.query.len() != h.n_w {
            return Err(Error::dim("query length", h.n_w, sample.query.len()));
        }
        let max = sample.story.max_index().max(sample.query.iter().copied().max().unwrap_or(0));
        if max >= h.vocab_size {
            return Err(Error::IndexOutOfRange {
                index: max,
                size: h.vocab_size,
            });
        }
        Ok(())
    }

    /// Embeds a story for pre-embedded inference without charging any FLOPs.
    pub fn prepare(&self, story: &StoryGrid) -> Result<PreparedStory> {
        let mut scratch = FlopLedger::new();
        let w = &self.weights;
        match self.hyper.variant {
            Variant::Conventional => {
                let pe = w.pe.as_ref().ok_or_else(|| Error::Config("missing positional encoding".into()))?;
                let embedded = w
                    .embeds
                    .iter()
                    .map(|e| embed_story(story, e, pe, &mut scratch))
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedStory { embedded, values: None })
            }
            Variant::KeyValue => {
                let a = &w.embeds[0];
                let values = story
                    .values
                    .as_ref()
                    .ok_or_else(|| Error::Config("key-value memory without values".into()))?;
                check_index(values, a.rows())?;
                let keys = (0..story.n_s)
                    .map(|i| embed_row_bow(story.row(i), a, &mut scratch, Category::Other))
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedStory {
                    embedded: vec![stack(keys, self.hyper.d)],
                    values: Some(a.select_rows(values)),
                })
            }
        }
    }

    fn head<'a>(&'a self, early: bool, opts: &InferenceOptions) -> Result<FcHead<'a>> {
        if opts.use_pruned {
            let heads = self
                .pruned
                .as_ref()
                .ok_or_else(|| Error::Config("pruned inference requested but the model has no pruned heads".into()))?;
            return if early {
                heads
                    .w_e
                    .as_ref()
                    .map(FcHead::Pruned)
                    .ok_or_else(|| Error::Config("no pruned W_E".into()))
            } else {
                Ok(FcHead::Pruned(&heads.w))
            };
        }
        if early {
            self.w_e
                .as_ref()
                .map(FcHead::Full)
                .ok_or_else(|| Error::Config("early exit needs a trained W_E".into()))
        } else {
            Ok(FcHead::Full(&self.weights.w))
        }
    }

    /// Runs one query, embedding the story as needed.
    pub fn forward(
        &self,
        sample: &Sample,
        opts: &InferenceOptions,
        gate: Option<&GateConfig>,
        ledger: &mut FlopLedger,
    ) -> Result<Prediction> {
        match opts.mode {
            AppMode::PreEmbedded => {
                self.check_sample(sample)?;
                let prepared = self.prepare(&sample.story)?;
                self.forward_prepared(sample, Some(&prepared), opts, gate, ledger)
            }
            AppMode::Interactive => self.forward_prepared(sample, None, opts, gate, ledger),
        }
    }

    /// Runs one query against a story embedded by [`Model::prepare`].
    ///
    /// `prepared` is required in pre-embedded mode and ignored in interactive mode.
    pub fn forward_prepared(
        &self,
        sample: &Sample,
        prepared: Option<&PreparedStory>,
        opts: &InferenceOptions,
        gate: Option<&GateConfig>,
        ledger: &mut FlopLedger,
    ) -> Result<Prediction> {
        self.check_sample(sample)?;
        let h = &self.hyper;
        let w = &self.weights;
        if let Some(t) = opts.zero_skip {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Param(format!("zero-skip threshold {t} not in [0, 1]")));
            }
        }
        if h.variant == Variant::KeyValue && opts.mode == AppMode::Interactive {
            return Err(Error::Unsupported("key-value variant has no interactive mode".into()));
        }
        let gate = match opts.policy {
            HopPolicy::Gated => {
                let g = gate.ok_or_else(|| Error::Config("gated inference needs a gate config".into()))?;
                g.validate()?;
                if self.icn.is_none() {
                    return Err(Error::Config("gated inference needs trained ICN weights".into()));
                }
                self.head(true, opts)?;
                Some(g)
            }
            HopPolicy::OneHop => {
                self.head(true, opts)?;
                None
            }
            HopPolicy::AllHops => None,
        };
        let prepared = match opts.mode {
            AppMode::PreEmbedded => {
                Some(prepared.ok_or_else(|| Error::Config("pre-embedded inference needs a prepared story".into()))?)
            }
            AppMode::Interactive => None,
        };

        let start = ledger.snapshot();
        let mut local = FlopLedger::new();
        let n_s = sample.story.n_s;
        let mut u = embed_query(&sample.query, &w.embeds[h.query_embed()], w.pe.as_ref(), &mut local)?;
        let mut trace = Vec::with_capacity(h.hops);
        let mut active: Option<Vec<usize>> = None;

        let run_hop = |k: usize, u: &[f64], active: &Option<Vec<usize>>, local: &mut FlopLedger| -> Result<(Vector, HopTrace, Vec<usize>)> {
            let owned;
            let (m_in, m_out, rows) = match prepared {
                Some(p) => {
                    let (m_in, m_out) = p.memory(self, k);
                    (m_in, m_out, (0..n_s).collect::<Vec<_>>())
                }
                None => {
                    let pe = w.pe.as_ref().ok_or_else(|| Error::Config("missing positional encoding".into()))?;
                    let rows: Vec<usize> = match active {
                        Some(a) => a.clone(),
                        None => (0..n_s).collect(),
                    };
                    let (a, c) = h.hop_embeds(k);
                    let m_in = embed_story_rows(&sample.story, &rows, &w.embeds[a], pe, local)?;
                    let m_out = embed_story_rows(&sample.story, &rows, &w.embeds[c], pe, local)?;
                    owned = (m_in, m_out);
                    (&owned.0, &owned.1, rows)
                }
            };
            let r = w.r.get(k - 1);
            if rows.is_empty() {
                // Every slot was dropped by re-embedding avoidance: o = 0.
                let mut key = tensor::add(&vec![0.0; u.len()], u, local, Category::KeySum)?;
                if let Some(r) = r {
                    key = tensor::matvec_acc(r, &key, local, Category::KeyGen)?;
                }
                let tr = HopTrace {
                    k: Vec::new(),
                    p_a: Vec::new(),
                    o: vec![0.0; u.len()],
                    u_out: key.to_vec(),
                    skipped: n_s,
                    n_s,
                };
                return Ok((key, tr, Vec::new()));
            }
            let (u_out, mut tr) = hop_over(u, m_in, m_out, opts.zero_skip, r, local)?;
            let kept: Vec<usize> = match opts.zero_skip {
                Some(t) => rows.iter().zip(&tr.p_a).filter(|(_, &p)| p >= t).map(|(&i, _)| i).collect(),
                None => rows.clone(),
            };
            tr.skipped = n_s - kept.len();
            tr.n_s = n_s;
            if !opts.record_attention {
                tr.k.clear();
                tr.p_a.clear();
            }
            Ok((u_out, tr, kept))
        };

        let (u2, tr, kept) = run_hop(1, &u, &active, &mut local)?;
        trace.push(tr);
        u = u2;
        if opts.avoid_reembedding && opts.mode == AppMode::Interactive && opts.zero_skip.is_some() {
            active = Some(kept);
        }

        let mut icn_probs = None;
        let (early, route) = match (opts.policy, gate) {
            (HopPolicy::OneHop, _) => (true, Route::Forced),
            (HopPolicy::Gated, Some(g)) => {
                let icn = self.icn.as_ref().expect("checked above");
                let probs = icn_forward(&u, icn, &mut local)?;
                icn_probs = Some(probs);
                match opts.force_route.unwrap_or_else(|| decide_route(probs, sample.task_id, g)) {
                    Difficulty::Easy => (true, Route::Easy),
                    Difficulty::Hard => (false, Route::Hard),
                }
            }
            _ => (false, Route::Forced),
        };
        if !early {
            for k in 2..=h.hops {
                let (next, tr, _) = run_hop(k, &u, &active, &mut local)?;
                trace.push(tr);
                u = next;
            }
        }
        let (answer, logits) = self.head(early, opts)?.apply(&u, &mut local)?;
        ledger.merge(&local);
        debug_assert!(ledger.since(&start).is_some());
        Ok(Prediction {
            answer,
            logits,
            route,
            hops_executed: trace.len(),
            ledger: local,
            trace,
            icn_probs,
        })
    }

    /// Output key after `hops` hops (`u^{hops+1}`), computed without charging.
    pub fn hop_state(&self, sample: &Sample, hops: usize) -> Result<Vector> {
        self.check_sample(sample)?;
        let prepared = self.prepare(&sample.story)?;
        let w = &self.weights;
        let mut scratch = FlopLedger::new();
        let mut u = embed_query(&sample.query, &w.embeds[self.hyper.query_embed()], w.pe.as_ref(), &mut scratch)?;
        for k in 1..=hops.min(self.hyper.hops) {
            let (m_in, m_out) = prepared.memory(self, k);
            u = hop_over(&u, m_in, m_out, None, w.r.get(k - 1), &mut scratch)?.0;
        }
        Ok(u)
    }
}
