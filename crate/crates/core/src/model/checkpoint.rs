use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HyperParams, Model, ModelWeights, PrunedHeads};
use crate::babi::Vocab;
use crate::error::{Error, Result};
use crate::gate::IcnWeights;
use crate::prune::{FcOrigin, PrunedFc};
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for TensorJson {
    fn from(m: &Matrix) -> Self {
        TensorJson {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }
}

impl TensorJson {
    fn column(v: &[f64]) -> Self {
        TensorJson {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    fn matrix(&self, name: &str) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, self.data.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))
    }
}

/// On-disk JSON document. Embeddings are stored `d × V` under `E0..En`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyper: HyperParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub tensors: BTreeMap<String, TensorJson>,
    /// Vocabulary rows kept in `W.pruned`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub important_indices: Option<Vec<usize>>,
    /// Vocabulary rows kept in `W_E.pruned`.
    #[serde(default, rename = "important_indices_W_E", skip_serializing_if = "Option::is_none")]
    pub important_indices_w_e: Option<Vec<usize>>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let mut t = BTreeMap::new();
        for (i, e) in model.weights.embeds.iter().enumerate() {
            t.insert(format!("E{i}"), TensorJson::from(&e.transpose()));
        }
        t.insert("W".into(), TensorJson::from(&model.weights.w));
        for (i, r) in model.weights.r.iter().enumerate() {
            t.insert(format!("R{}", i + 1), TensorJson::from(r));
        }
        if let Some(w_e) = &model.w_e {
            t.insert("W_E".into(), TensorJson::from(w_e));
        }
        if let Some(icn) = &model.icn {
            t.insert("icn.W1".into(), TensorJson::from(&icn.w1));
            t.insert("icn.b1".into(), TensorJson::column(&icn.b1));
            t.insert("icn.W2".into(), TensorJson::from(&icn.w2));
            t.insert("icn.b2".into(), TensorJson::column(&icn.b2));
        }
        let mut important_indices = None;
        let mut important_indices_w_e = None;
        if let Some(p) = &model.pruned {
            t.insert("W.pruned".into(), TensorJson::from(&p.w.rows));
            important_indices = Some(p.w.important_indices.clone());
            if let Some(pe) = &p.w_e {
                t.insert("W_E.pruned".into(), TensorJson::from(&pe.rows));
                important_indices_w_e = Some(pe.important_indices.clone());
            }
        }
        Checkpoint {
            format_version: FORMAT_VERSION,
            hyper: model.hyper,
            vocab: model.vocab.as_ref().map(|v| v.words().to_vec()),
            tensors: t,
            important_indices,
            important_indices_w_e,
        }
    }

    fn take(&self, name: &str) -> Result<Matrix> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?
            .matrix(name)
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.take(name)?;
        if m.cols() != 1 {
            return Err(Error::Checkpoint(format!("tensor {name} must be a column")));
        }
        Ok(m.data().to_vec())
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let hyper = self.hyper;
        hyper.validate()?;
        let embeds = (0..hyper.embed_count())
            .map(|i| Ok(self.take(&format!("E{i}"))?.transpose()))
            .collect::<Result<Vec<_>>>()?;
        let r = match hyper.variant {
            super::Variant::Conventional => Vec::new(),
            super::Variant::KeyValue => (1..=hyper.hops)
                .map(|i| self.take(&format!("R{i}")))
                .collect::<Result<Vec<_>>>()?,
        };
        let weights = ModelWeights {
            embeds,
            w: self.take("W")?,
            r,
            pe: ModelWeights::pe_for(&hyper),
        };
        let w_e = self.tensors.contains_key("W_E").then(|| self.take("W_E")).transpose()?;
        let icn = if self.tensors.contains_key("icn.W1") {
            Some(IcnWeights {
                w1: self.take("icn.W1")?,
                b1: self.vector("icn.b1")?,
                w2: self.take("icn.W2")?,
                b2: self.vector("icn.b2")?,
            })
        } else {
            None
        };
        let pruned = if self.tensors.contains_key("W.pruned") {
            let idx = self
                .important_indices
                .clone()
                .ok_or_else(|| Error::Checkpoint("W.pruned without important_indices".into()))?;
            let w = PrunedFc::new(self.take("W.pruned")?, idx, FcOrigin::W, hyper.vocab_size)?;
            let w_e = if self.tensors.contains_key("W_E.pruned") {
                let idx = self
                    .important_indices_w_e
                    .clone()
                    .ok_or_else(|| Error::Checkpoint("W_E.pruned without important_indices_W_E".into()))?;
                Some(PrunedFc::new(self.take("W_E.pruned")?, idx, FcOrigin::WE, hyper.vocab_size)?)
            } else {
                None
            };
            Some(PrunedHeads { w, w_e })
        } else {
            None
        };
        let model = Model {
            hyper,
            vocab: self.vocab.map(Vocab::from),
            weights,
            w_e,
            icn,
            pruned,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Writes the checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_model(model))?;
    crate::report::write_atomic(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_model()
}
