//! Memory-network model: hyperparameters, weights, the instrumented forward
//! pass and the JSON checkpoint format.

mod checkpoint;
mod engine;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use engine::{
    attention_hop, embed_query, embed_story, EmbeddedMemory, FcHead, HopPolicy, HopTrace,
    InferenceOptions, Prediction, PreparedStory, Route,
};

use crate::babi::{positional_encoding, Vocab, PAD};
use crate::error::{Error, Result};
use crate::gate::IcnWeights;
use crate::prune::PrunedFc;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Conventional,
    KeyValue,
}

/// Whether story embedding is charged per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppMode {
    PreEmbedded,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tying {
    /// `A_k = E_{k-1}`, `C_k = E_k`, `B = E_0`.
    Adjacent,
    /// Independent `A_k`, `C_k` per hop plus `B`.
    HopSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    pub d: usize,
    pub vocab_size: usize,
    pub n_s: usize,
    pub n_w: usize,
    pub hops: usize,
    pub variant: Variant,
    pub tying: Tying,
}

impl HyperParams {
    pub fn conventional(vocab_size: usize, n_s: usize, n_w: usize) -> Self {
        HyperParams {
            d: 40,
            vocab_size,
            n_s,
            n_w,
            hops: 3,
            variant: Variant::Conventional,
            tying: Tying::Adjacent,
        }
    }

    pub fn key_value(vocab_size: usize, n_s: usize, n_w: usize, d: usize) -> Self {
        HyperParams {
            d,
            vocab_size,
            n_s,
            n_w,
            hops: 2,
            variant: Variant::KeyValue,
            tying: Tying::Adjacent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("vocab_size", self.vocab_size),
            ("n_s", self.n_s),
            ("n_w", self.n_w),
            ("hops", self.hops),
        ] {
            if v == 0 {
                return Err(Error::Param(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Number of embedding matrices the tying scheme needs.
    pub fn embed_count(&self) -> usize {
        match (self.variant, self.tying) {
            (Variant::KeyValue, _) => 1,
            (Variant::Conventional, Tying::Adjacent) => self.hops + 1,
            (Variant::Conventional, Tying::HopSpecific) => 2 * self.hops + 1,
        }
    }

    /// Embedding used for the query (`B`).
    pub fn query_embed(&self) -> usize {
        0
    }

    /// `(A_k, C_k)` embedding indices for 1-based hop `k`.
    pub fn hop_embeds(&self, k: usize) -> (usize, usize) {
        match (self.variant, self.tying) {
            (Variant::KeyValue, _) => (0, 0),
            (Variant::Conventional, Tying::Adjacent) => (k - 1, k),
            (Variant::Conventional, Tying::HopSpecific) => (2 * k - 1, 2 * k),
        }
    }
}

/// Trainable tensors of the baseline network.
///
/// Embeddings are stored word-major (`V × d`, row `w` is word `w`'s vector),
/// i.e. the transpose of the `d × V` layout used in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub embeds: Vec<Matrix>,
    /// Final FC layer (`V × d`).
    pub w: Matrix,
    /// Output-key matrices `R_1..R_m` (`d × d`); empty for the conventional variant.
    pub r: Vec<Matrix>,
    /// Positional encoding (`n_w × d`); conventional variant only.
    pub pe: Option<Matrix>,
}

impl ModelWeights {
    pub fn init(hyper: &HyperParams, std: f64, rng: &mut impl Rng) -> Result<Self> {
        hyper.validate()?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Param(e.to_string()))?;
        let (v, d) = (hyper.vocab_size, hyper.d);
        let mut sample = |rows, cols| Matrix::from_fn(rows, cols, |_, _| normal.sample(rng));
        let embeds = (0..hyper.embed_count()).map(|_| sample(v, d)).collect();
        let w = sample(v, d);
        let r = match hyper.variant {
            Variant::Conventional => Vec::new(),
            Variant::KeyValue => (0..hyper.hops)
                .map(|_| {
                    let mut m = sample(d, d);
                    for i in 0..d {
                        m.set(i, i, m.get(i, i) + 1.0);
                    }
                    m
                })
                .collect(),
        };
        let mut weights = ModelWeights {
            embeds,
            w,
            r,
            pe: Self::pe_for(hyper),
        };
        weights.zero_padding();
        Ok(weights)
    }

    pub fn pe_for(hyper: &HyperParams) -> Option<Matrix> {
        match hyper.variant {
            Variant::Conventional => Some(positional_encoding(hyper.n_w, hyper.d)),
            Variant::KeyValue => None,
        }
    }

    /// Resets the padding word's embedding rows to zero.
    pub fn zero_padding(&mut self) {
        for e in &mut self.embeds {
            e.row_mut(PAD).iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn validate(&self, hyper: &HyperParams) -> Result<()> {
        let (v, d) = (hyper.vocab_size, hyper.d);
        if self.embeds.len() != hyper.embed_count() {
            return Err(Error::dim("embeddings", hyper.embed_count(), self.embeds.len()));
        }
        for e in &self.embeds {
            if e.rows() != v || e.cols() != d {
                return Err(Error::dim("embedding", v * d, e.rows() * e.cols()));
            }
        }
        if self.w.rows() != v || self.w.cols() != d {
            return Err(Error::dim("W", v * d, self.w.rows() * self.w.cols()));
        }
        let want_r = match hyper.variant {
            Variant::Conventional => 0,
            Variant::KeyValue => hyper.hops,
        };
        if self.r.len() != want_r || self.r.iter().any(|m| m.rows() != d || m.cols() != d) {
            return Err(Error::dim("R", want_r, self.r.len()));
        }
        match (&self.pe, hyper.variant) {
            (Some(pe), Variant::Conventional) if pe.rows() == hyper.n_w && pe.cols() == d => Ok(()),
            (None, Variant::KeyValue) => Ok(()),
            _ => Err(Error::Config("positional encoding does not match variant".into())),
        }
    }
}

/// Pruned replacements for the two answer heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedHeads {
    pub w: PrunedFc,
    pub w_e: Option<PrunedFc>,
}

/// Everything a checkpoint carries: baseline weights plus the optional
/// early-exit head, ICN and pruned heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hyper: HyperParams,
    pub vocab: Option<Vocab>,
    pub weights: ModelWeights,
    pub w_e: Option<Matrix>,
    pub icn: Option<IcnWeights>,
    pub pruned: Option<PrunedHeads>,
}

impl Model {
    pub fn new(hyper: HyperParams, weights: ModelWeights) -> Result<Self> {
        weights.validate(&hyper)?;
        Ok(Model {
            hyper,
            vocab: None,
            weights,
            w_e: None,
            icn: None,
            pruned: None,
        })
    }

    pub fn with_vocab(mut self, vocab: Vocab) -> Self {
        self.vocab = Some(vocab);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.weights.validate(&self.hyper)?;
        if let Some(v) = &self.vocab {
            if v.len() != self.hyper.vocab_size {
                return Err(Error::dim("vocab", self.hyper.vocab_size, v.len()));
            }
        }
        if let Some(w_e) = &self.w_e {
            if w_e.rows() != self.hyper.vocab_size || w_e.cols() != self.hyper.d {
                return Err(Error::dim("W_E", self.hyper.vocab_size * self.hyper.d, w_e.rows() * w_e.cols()));
            }
        }
        if let Some(icn) = &self.icn {
            icn.validate()?;
            if icn.input_dim() != self.hyper.d {
                return Err(Error::dim("icn.W1", self.hyper.d, icn.input_dim()));
            }
        }
        Ok(())
    }
}
