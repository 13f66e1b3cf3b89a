//! Sentence, answer and visual-cue encoders.
//!
//! Cue slots and answers share one embedding table: a recognised tool,
//! panel or dialog is represented by exactly the row that scores it as an
//! answer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CueAnnotation, Stream, Vocabulary, PAD};
use crate::cues::WordVectors;
use crate::error::{Error, Result};
use crate::graphembed::NodeEmbeddings;
use crate::kb::AnswerPool;
use crate::nn::{axpy, dot, Grads, ParamId, Params};

/// Minimum padded sentence length; the widest default filter is 5.
pub const MIN_SENTENCE_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordEmbeddingTable {
    pub id: ParamId,
    pub dim: usize,
}

impl WordEmbeddingTable {
    /// Rows come from `pretrained` where the token is known, otherwise
    /// uniform in [-0.25, 0.25]. The PAD row is zero.
    pub fn new(
        params: &mut Params,
        vocab: &Vocabulary,
        dim: usize,
        pretrained: Option<&WordVectors>,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if let Some(wv) = pretrained {
            if wv.dim() != dim {
                return Err(Error::Dimension(format!(
                    "pretrained word vectors have dim {}, model expects {dim}",
                    wv.dim()
                )));
            }
        }
        let mut value = Vec::with_capacity(vocab.len() * dim);
        for (i, tok) in vocab.tokens().iter().enumerate() {
            if i == PAD {
                value.extend(std::iter::repeat_n(0.0, dim));
            } else if let Some(v) = pretrained.filter(|wv| wv.contains(tok)) {
                value.extend_from_slice(&v.get(tok));
            } else {
                value.extend((0..dim).map(|_| rng.gen_range(-0.25..0.25)));
            }
        }
        let id = params.add("word_embeddings", vocab.len(), dim, value);
        params.get_mut(id).trainable = trainable;
        Ok(WordEmbeddingTable { id, dim })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvFilter {
    pub width: usize,
    pub w: ParamId,
    pub b: ParamId,
}

/// Convolution over word windows, rectifier, max over time; one block of
/// feature maps per filter width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCnn {
    pub embed: WordEmbeddingTable,
    pub filters: Vec<ConvFilter>,
    pub maps: usize,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    ids: Vec<usize>,
    /// Per filter, per map: (best window start, pre-activation at it).
    best: Vec<Vec<(usize, f64)>>,
}

impl TextCnn {
    pub fn new(params: &mut Params, embed: WordEmbeddingTable, widths: &[usize], maps: usize, rng: &mut impl Rng) -> Self {
        let filters = widths
            .iter()
            .map(|&width| {
                let fan_in = width * embed.dim;
                let bound = (6.0 / (fan_in + maps) as f64).sqrt();
                let w = params.add_uniform(format!("cnn.w{width}.weight"), maps, fan_in, bound, rng);
                let b = params.add(format!("cnn.w{width}.bias"), maps, 1, vec![0.0; maps]);
                ConvFilter { width, w, b }
            })
            .collect();
        TextCnn { embed, filters, maps }
    }

    pub fn output_dim(&self) -> usize {
        self.maps * self.filters.len()
    }

    fn min_len(&self) -> usize {
        self.filters
            .iter()
            .map(|f| f.width)
            .max()
            .unwrap_or(0)
            .max(MIN_SENTENCE_LEN)
    }

    /// Encodes token ids (right-padded with PAD up to the minimum length).
    pub fn encode(&self, params: &Params, ids: &[usize]) -> (Vec<f64>, CnnCache) {
        let mut ids = ids.to_vec();
        ids.resize(ids.len().max(self.min_len()), PAD);
        let dim = self.embed.dim;
        let table = &params.get(self.embed.id).value;
        let mut out = Vec::with_capacity(self.output_dim());
        let mut best = Vec::with_capacity(self.filters.len());
        let mut window = Vec::new();
        for f in &self.filters {
            let w = &params.get(f.w).value;
            let b = &params.get(f.b).value;
            let fan_in = f.width * dim;
            let mut top = vec![(0usize, f64::NEG_INFINITY); self.maps];
            for start in 0..=ids.len() - f.width {
                window.clear();
                for &tok in &ids[start..start + f.width] {
                    window.extend_from_slice(&table[tok * dim..(tok + 1) * dim]);
                }
                for (m, slot) in top.iter_mut().enumerate() {
                    let pre = dot(&w[m * fan_in..(m + 1) * fan_in], &window) + b[m];
                    if pre > slot.1 {
                        *slot = (start, pre);
                    }
                }
            }
            out.extend(top.iter().map(|&(_, pre)| pre.max(0.0)));
            best.push(top);
        }
        (out, CnnCache { ids, best })
    }

    pub fn backward(&self, params: &Params, grads: &mut Grads, cache: &CnnCache, dout: &[f64]) {
        let dim = self.embed.dim;
        let train_words = params.get(self.embed.id).trainable;
        for (fi, f) in self.filters.iter().enumerate() {
            let fan_in = f.width * dim;
            let w = &params.get(f.w).value;
            for (m, &(start, pre)) in cache.best[fi].iter().enumerate() {
                let g = dout[fi * self.maps + m];
                if pre <= 0.0 || g == 0.0 {
                    continue;
                }
                grads.get_mut(f.b)[m] += g;
                let wm = &w[m * fan_in..(m + 1) * fan_in];
                for (k, &tok) in cache.ids[start..start + f.width].iter().enumerate() {
                    let row = &params.get(self.embed.id).value[tok * dim..(tok + 1) * dim];
                    axpy(g, row, &mut grads.get_mut(f.w)[m * fan_in + k * dim..m * fan_in + (k + 1) * dim]);
                    if train_words && tok != PAD {
                        grads.add_row(self.embed.id, dim, tok, &scaled(&wm[k * dim..(k + 1) * dim], g));
                    }
                }
            }
        }
    }
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// How the answer table starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnswerInit {
    #[default]
    Random,
    Graph,
}

/// One row per pool candidate; `g(a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerEmbeddingTable {
    pub id: ParamId,
    pub dim: usize,
    pub size: usize,
}

impl AnswerEmbeddingTable {
    pub fn new(
        params: &mut Params,
        pool: &AnswerPool,
        dim: usize,
        graph: Option<&NodeEmbeddings>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let value = match graph {
            None => (0..pool.len() * dim).map(|_| rng.gen_range(-0.01..0.01)).collect(),
            Some(emb) => {
                if emb.dim() != dim {
                    return Err(Error::Dimension(format!(
                        "graph embeddings have dim {}, answer table needs {dim}",
                        emb.dim()
                    )));
                }
                let mut value = Vec::with_capacity(pool.len() * dim);
                for id in pool.ids() {
                    let row = emb
                        .get(id)
                        .ok_or_else(|| Error::UnknownCandidate(format!("{id} (missing from graph embeddings)")))?;
                    value.extend_from_slice(row);
                }
                value
            }
        };
        let id = params.add("answer_embeddings", pool.len(), dim, value);
        Ok(AnswerEmbeddingTable {
            id,
            dim,
            size: pool.len(),
        })
    }

    pub fn encode_answer<'p>(&self, params: &'p Params, index: usize) -> Result<&'p [f64]> {
        if index >= self.size {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.size,
            });
        }
        Ok(params.get(self.id).row(index))
    }

    /// `f · g(a_i)` for every candidate, in pool order.
    pub fn score_all(&self, params: &Params, f: &[f64]) -> Vec<f64> {
        let table = &params.get(self.id).value;
        (0..self.size).map(|i| dot(&table[i * self.dim..(i + 1) * self.dim], f)).collect()
    }

    pub fn score_backward(&self, params: &Params, grads: &mut Grads, f: &[f64], dscores: &[f64]) -> Vec<f64> {
        let table = &params.get(self.id).value;
        let mut df = vec![0.0; self.dim];
        let g = grads.get_mut(self.id);
        for (i, &d) in dscores.iter().enumerate() {
            if d != 0.0 {
                axpy(d, &table[i * self.dim..(i + 1) * self.dim], &mut df);
                axpy(d, f, &mut g[i * self.dim..(i + 1) * self.dim]);
            }
        }
        df
    }
}

/// Learned stand-ins for absent tool, panel and dialog cues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoneVectors {
    pub id: ParamId,
    pub dim: usize,
}

impl NoneVectors {
    pub fn new(params: &mut Params, dim: usize, rng: &mut impl Rng) -> Self {
        let id = params.add_uniform("none_vectors", 3, dim, 0.01, rng);
        NoneVectors { id, dim }
    }
}

/// Pool indices of a step's cues in tool, panel, dialog order.
pub type CueSlots = [Option<usize>; 3];

pub fn cue_slots(cue: &CueAnnotation, pool: &AnswerPool) -> Result<CueSlots> {
    let mut out = [None; 3];
    for (k, stream) in Stream::ALL.iter().enumerate() {
        if let Some(id) = cue.get(*stream) {
            out[k] = Some(pool.index_of(id).ok_or_else(|| Error::UnknownCandidate(id.to_string()))?);
        }
    }
    Ok(out)
}

/// Tool, panel and dialog vectors: the answer row when present, the
/// stream's none-vector otherwise.
pub fn encode_cues(
    params: &Params,
    slots: &CueSlots,
    answers: &AnswerEmbeddingTable,
    none: &NoneVectors,
) -> Result<[Vec<f64>; 3]> {
    let enc = |k: usize| -> Result<Vec<f64>> {
        Ok(match slots[k] {
            Some(i) => answers.encode_answer(params, i)?.to_vec(),
            None => params.get(none.id).row(k).to_vec(),
        })
    };
    Ok([enc(0)?, enc(1)?, enc(2)?])
}

/// Routes a cue-vector gradient back to whichever parameter row produced it.
pub fn encode_cues_backward(
    grads: &mut Grads,
    slots: &CueSlots,
    answers: &AnswerEmbeddingTable,
    none: &NoneVectors,
    dcues: &[Vec<f64>; 3],
) {
    for k in 0..3 {
        match slots[k] {
            Some(i) => grads.add_row(answers.id, answers.dim, i, &dcues[k]),
            None => grads.add_row(none.id, none.dim, k, &dcues[k]),
        }
    }
}
