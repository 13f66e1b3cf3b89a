//! Context fusion models.
//!
//! All four variants encode the question and each window sentence with the
//! shared CNN, encode cue slots through the answer table, run a
//! bidirectional GRU over the window, fuse a context vector with the
//! question, project to the answer dimension and score every candidate by
//! dot product.
//!
//! * `Base` feeds `[s_j; tool_j; panel_j; dialog_j]` and keeps the centre state.
//! * `Temporal` feeds the same inputs and attends over all states with the question.
//! * `Spatial` attends over the three cue vectors per step with the question and
//!   feeds `[s_j; weighted cue]`, keeping the centre state.
//! * `Dual` runs a transcript-only GRU first, attends over it with the question,
//!   and uses the attended summary as the query of the spatial attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextMask, ContextWindow, Vocabulary};
use crate::cues::WordVectors;
use crate::encoders::{
    cue_slots, encode_cues, encode_cues_backward, AnswerEmbeddingTable, AnswerInit, CnnCache, CueSlots, NoneVectors,
    TextCnn, WordEmbeddingTable,
};
use crate::error::{Error, Result};
use crate::graphembed::NodeEmbeddings;
use crate::kb::AnswerPool;
use crate::nn::{
    apply_mask, axpy, concat, dot, dropout_mask, log_sum_exp, masked_softmax, softmax, softmax_backward,
    AttentionMlp, BiGru, BiGruCache, Grads, Linear, MlpCache, Params,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Base,
    Temporal,
    Spatial,
    Dual,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Temporal, Variant::Spatial, Variant::Dual];

    pub fn has_temporal(self) -> bool {
        matches!(self, Variant::Temporal | Variant::Dual)
    }

    pub fn has_spatial(self) -> bool {
        matches!(self, Variant::Spatial | Variant::Dual)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Temporal => "temporal",
            Variant::Spatial => "spatial",
            Variant::Dual => "dual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub w: usize,
    pub word_dim: usize,
    pub filter_widths: Vec<usize>,
    pub feature_maps: usize,
    pub gru_hidden: usize,
    pub attn_hidden: usize,
    pub answer_dim: usize,
    pub dropout: f64,
    pub train_word_embeddings: bool,
    pub answer_init: AnswerInit,
    pub context: ContextMask,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Base,
            w: 5,
            word_dim: 300,
            filter_widths: vec![3, 4, 5],
            feature_maps: 100,
            gru_hidden: 300,
            attn_hidden: 300,
            answer_dim: 300,
            dropout: 0.5,
            train_word_embeddings: true,
            answer_init: AnswerInit::Random,
            context: ContextMask::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Tiny dimensions for gradient checks.
    pub fn miniature(variant: Variant) -> Self {
        ModelConfig {
            variant,
            w: 1,
            word_dim: 6,
            feature_maps: 2,
            gru_hidden: 3,
            attn_hidden: 6,
            answer_dim: 6,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    pub fn sentence_dim(&self) -> usize {
        self.feature_maps * self.filter_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("feature_maps", self.feature_maps),
            ("gru_hidden", self.gru_hidden),
            ("attn_hidden", self.attn_hidden),
            ("answer_dim", self.answer_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(Error::Config("model.filter_widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("model.dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Attention weights from one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// One weight per window step; pads get zero.
    pub temporal: Option<Vec<f64>>,
    /// Tool, panel, dialog weights per window step.
    pub spatial: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub tokens: Vec<usize>,
    pub cues: CueSlots,
    pub pad: bool,
}

/// A context window mapped to vocabulary and pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub question: Vec<usize>,
    pub steps: Vec<StepInput>,
}

/// Optional knobs of a forward pass.
#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Enables dropout with masks drawn from this generator.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
    /// Replaces the question-driven temporal weights (temporal variant).
    pub force_temporal: Option<&'a [f64]>,
}

struct TemporalTape {
    alpha: Vec<f64>,
    caches: Vec<Option<MlpCache>>,
    forced: bool,
}

struct SpatialTape {
    beta: Vec<[f64; 3]>,
    caches: Vec<[MlpCache; 3]>,
}

struct GruTape {
    cache: BiGruCache,
    masks: Vec<Option<Vec<f64>>>,
    outputs: Vec<Vec<f64>>,
}

struct Tape {
    q_cache: CnnCache,
    q_mask: Option<Vec<f64>>,
    qd: Vec<f64>,
    s_caches: Vec<CnnCache>,
    s_masks: Vec<Option<Vec<f64>>>,
    cues: Vec<[Vec<f64>; 3]>,
    transcript: Option<GruTape>,
    tau: Option<Vec<f64>>,
    temporal: Option<TemporalTape>,
    spatial: Option<SpatialTape>,
    main: GruTape,
    u_mask: Option<Vec<f64>>,
    ud: Vec<f64>,
    f: Vec<f64>,
}

pub struct Forward {
    pub scores: Vec<f64>,
    pub trace: AttentionTrace,
    tape: Tape,
}

/// All trainable state of one fusion variant plus the vocabulary and pool
/// it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct QAModel {
    pub config: ModelConfig,
    pub params: Params,
    pub vocab: Vocabulary,
    pub pool: AnswerPool,
    pub cnn: TextCnn,
    pub answers: AnswerEmbeddingTable,
    pub none: NoneVectors,
    pub transcript_gru: Option<BiGru>,
    pub gru: BiGru,
    pub temporal: Option<AttentionMlp>,
    pub spatial: Option<AttentionMlp>,
    pub proj: Linear,
}

impl QAModel {
    /// Deterministic initialisation from `config.seed`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        pool: AnswerPool,
        word_vectors: Option<&WordVectors>,
        graph: Option<&NodeEmbeddings>,
    ) -> Result<Self> {
        config.validate()?;
        if config.answer_init == AnswerInit::Graph && graph.is_none() {
            return Err(Error::Config("answer_init=graph needs graph embeddings".into()));
        }
        let graph = graph.filter(|_| config.answer_init == AnswerInit::Graph);
        let mut rng = rng::stream(config.seed, &[0x1417]);
        let mut params = Params::default();
        let embed = WordEmbeddingTable::new(
            &mut params,
            &vocab,
            config.word_dim,
            word_vectors,
            config.train_word_embeddings,
            &mut rng,
        )?;
        let cnn = TextCnn::new(&mut params, embed, &config.filter_widths, config.feature_maps, &mut rng);
        let answers = AnswerEmbeddingTable::new(&mut params, &pool, config.answer_dim, graph, &mut rng)?;
        let none = NoneVectors::new(&mut params, config.answer_dim, &mut rng);

        let enc = config.sentence_dim();
        let ans = config.answer_dim;
        let hidden = config.gru_hidden;
        let states = 2 * hidden;
        let transcript_gru = (config.variant == Variant::Dual)
            .then(|| BiGru::new(&mut params, "transcript_gru", enc, hidden, &mut rng));
        let gru_input = match config.variant {
            Variant::Base | Variant::Temporal => enc + 3 * ans,
            Variant::Spatial | Variant::Dual => enc + ans,
        };
        let gru = BiGru::new(&mut params, "gru", gru_input, hidden, &mut rng);
        let temporal = config
            .variant
            .has_temporal()
            .then(|| AttentionMlp::new(&mut params, "temporal_attn", enc + states, config.attn_hidden, &mut rng));
        let spatial_query = if config.variant == Variant::Dual { states } else { enc };
        let spatial = config
            .variant
            .has_spatial()
            .then(|| AttentionMlp::new(&mut params, "spatial_attn", spatial_query + ans, config.attn_hidden, &mut rng));
        let proj = Linear::new(&mut params, "fusion_proj", states + enc, ans, &mut rng);
        Ok(QAModel {
            config,
            params,
            vocab,
            pool,
            cnn,
            answers,
            none,
            transcript_gru,
            gru,
            temporal,
            spatial,
            proj,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Maps a window onto indices, applying the configured context mask.
    pub fn encode_input(&self, window: &ContextWindow) -> Result<EncodedInput> {
        let expected = 2 * self.config.w + 1;
        if window.steps.len() != expected {
            return Err(Error::Dimension(format!(
                "window has {} steps, model expects {expected}",
                window.steps.len()
            )));
        }
        let window = window.clone().masked(self.config.context);
        let steps = window
            .steps
            .iter()
            .map(|s| {
                Ok(StepInput {
                    tokens: self.vocab.encode(&s.tokens),
                    cues: cue_slots(&s.cues, &self.pool)?,
                    pad: s.pad,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EncodedInput {
            question: self.vocab.encode(&window.question_tokens),
            steps,
        })
    }

    /// Eval-mode scores and attention for a raw window.
    pub fn forward(&self, window: &ContextWindow) -> Result<(Vec<f64>, AttentionTrace)> {
        let input = self.encode_input(window)?;
        let fwd = self.run(&input, ForwardOptions::default())?;
        Ok((fwd.scores, fwd.trace))
    }

    pub fn run(&self, input: &EncodedInput, mut opts: ForwardOptions<'_>) -> Result<Forward> {
        let expected = 2 * self.config.w + 1;
        if input.steps.len() != expected {
            return Err(Error::Dimension(format!(
                "input has {} steps, model expects {expected}",
                input.steps.len()
            )));
        }
        if let Some(a) = opts.force_temporal {
            if a.len() != expected || self.config.variant != Variant::Temporal {
                return Err(Error::Dimension("forced temporal weights need the temporal variant and 2w+1 values".into()));
            }
        }
        let rate = self.config.dropout;
        let mut drop = |len: usize| -> Option<Vec<f64>> {
            match opts.dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => Some(dropout_mask(len, rate, rng)),
                _ => None,
            }
        };
        let p = &self.params;
        let w = self.config.w;
        let pads: Vec<bool> = input.steps.iter().map(|s| s.pad).collect();

        let (q, q_cache) = self.cnn.encode(p, &input.question);
        let q_mask = drop(q.len());
        let qd = apply_mask(&q, q_mask.as_deref());

        let mut s_caches = Vec::with_capacity(expected);
        let mut s_masks = Vec::with_capacity(expected);
        let mut sd = Vec::with_capacity(expected);
        let mut cues = Vec::with_capacity(expected);
        for step in &input.steps {
            let (s, cache) = self.cnn.encode(p, &step.tokens);
            let mask = drop(s.len());
            sd.push(apply_mask(&s, mask.as_deref()));
            s_caches.push(cache);
            s_masks.push(mask);
            cues.push(encode_cues(p, &step.cues, &self.answers, &self.none)?);
        }

        let mut transcript = None;
        let mut tau = None;
        let mut temporal = None;
        let mut spatial = None;
        let xs: Vec<Vec<f64>> = match self.config.variant {
            Variant::Base | Variant::Temporal => sd
                .iter()
                .zip(&cues)
                .map(|(s, c)| concat(&[s, &c[0], &c[1], &c[2]]))
                .collect(),
            Variant::Spatial => {
                let (tape, vbar) = self.spatial_attend(&qd, &cues);
                spatial = Some(tape);
                sd.iter().zip(&vbar).map(|(s, v)| concat(&[s, v])).collect()
            }
            Variant::Dual => {
                let tgru = self.transcript_gru.as_ref().expect("dual has transcript gru");
                let (h1, cache) = tgru.forward(p, &sd);
                let masks: Vec<Option<Vec<f64>>> = h1.iter().map(|h| drop(h.len())).collect();
                let h1d: Vec<Vec<f64>> = h1.iter().zip(&masks).map(|(h, m)| apply_mask(h, m.as_deref())).collect();
                let (ttape, summary) = self.temporal_attend(&qd, &h1d, &pads, None);
                let (stape, vbar) = self.spatial_attend(&summary, &cues);
                transcript = Some(GruTape {
                    cache,
                    masks,
                    outputs: h1d,
                });
                temporal = Some(ttape);
                spatial = Some(stape);
                tau = Some(summary);
                sd.iter().zip(&vbar).map(|(s, v)| concat(&[s, v])).collect()
            }
        };

        let (h, cache) = self.gru.forward(p, &xs);
        let masks: Vec<Option<Vec<f64>>> = h.iter().map(|x| drop(x.len())).collect();
        let hd: Vec<Vec<f64>> = h.iter().zip(&masks).map(|(x, m)| apply_mask(x, m.as_deref())).collect();
        let ctx = if self.config.variant == Variant::Temporal {
            let (ttape, summary) = self.temporal_attend(&qd, &hd, &pads, opts.force_temporal);
            temporal = Some(ttape);
            summary
        } else {
            hd[w].clone()
        };
        let main = GruTape {
            cache,
            masks,
            outputs: hd,
        };

        let u = concat(&[&ctx, &qd]);
        let u_mask = drop(u.len());
        let ud = apply_mask(&u, u_mask.as_deref());
        let f = self.proj.forward(p, &ud);
        let scores = self.answers.score_all(p, &f);

        let trace = AttentionTrace {
            temporal: temporal.as_ref().map(|t| t.alpha.clone()),
            spatial: spatial.as_ref().map(|s| s.beta.clone()),
        };
        Ok(Forward {
            scores,
            trace,
            tape: Tape {
                q_cache,
                q_mask,
                qd,
                s_caches,
                s_masks,
                cues,
                transcript,
                tau,
                temporal,
                spatial,
                main,
                u_mask,
                ud,
                f,
            },
        })
    }

    fn temporal_attend(
        &self,
        query: &[f64],
        states: &[Vec<f64>],
        pads: &[bool],
        forced: Option<&[f64]>,
    ) -> (TemporalTape, Vec<f64>) {
        let mlp = self.temporal.as_ref().expect("variant has temporal attention");
        let (alpha, caches) = match forced {
            Some(a) => (a.to_vec(), vec![None; states.len()]),
            None => {
                let mut logits = vec![0.0; states.len()];
                let mut caches = Vec::with_capacity(states.len());
                for (j, h) in states.iter().enumerate() {
                    if pads[j] {
                        caches.push(None);
                        continue;
                    }
                    let (score, cache) = mlp.forward(&self.params, concat(&[query, h]));
                    logits[j] = score;
                    caches.push(Some(cache));
                }
                let keep: Vec<bool> = pads.iter().map(|p| !p).collect();
                (masked_softmax(&logits, Some(&keep)), caches)
            }
        };
        let mut summary = vec![0.0; states[0].len()];
        for (a, h) in alpha.iter().zip(states) {
            axpy(*a, h, &mut summary);
        }
        (
            TemporalTape {
                alpha,
                caches,
                forced: forced.is_some(),
            },
            summary,
        )
    }

    /// Returns `(dquery, dstates)`.
    fn temporal_backward(
        &self,
        grads: &mut Grads,
        tape: &TemporalTape,
        states: &[Vec<f64>],
        dsummary: &[f64],
        query_dim: usize,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mlp = self.temporal.as_ref().expect("variant has temporal attention");
        let mut dquery = vec![0.0; query_dim];
        let mut dstates: Vec<Vec<f64>> = tape.alpha.iter().map(|a| dsummary.iter().map(|d| a * d).collect()).collect();
        if tape.forced {
            return (dquery, dstates);
        }
        let dalpha: Vec<f64> = states.iter().map(|h| dot(h, dsummary)).collect();
        let dlogits = softmax_backward(&tape.alpha, &dalpha);
        for (j, cache) in tape.caches.iter().enumerate() {
            if let Some(cache) = cache {
                let dx = mlp.backward(&self.params, grads, cache, dlogits[j]);
                axpy(1.0, &dx[..query_dim], &mut dquery);
                axpy(1.0, &dx[query_dim..], &mut dstates[j]);
            }
        }
        (dquery, dstates)
    }

    fn spatial_attend(&self, query: &[f64], cues: &[[Vec<f64>; 3]]) -> (SpatialTape, Vec<Vec<f64>>) {
        let mlp = self.spatial.as_ref().expect("variant has spatial attention");
        let mut beta = Vec::with_capacity(cues.len());
        let mut caches = Vec::with_capacity(cues.len());
        let mut vbar = Vec::with_capacity(cues.len());
        for c in cues {
            let (s0, c0) = mlp.forward(&self.params, concat(&[query, &c[0]]));
            let (s1, c1) = mlp.forward(&self.params, concat(&[query, &c[1]]));
            let (s2, c2) = mlp.forward(&self.params, concat(&[query, &c[2]]));
            let b = softmax(&[s0, s1, s2]);
            let mut v = vec![0.0; c[0].len()];
            for r in 0..3 {
                axpy(b[r], &c[r], &mut v);
            }
            beta.push([b[0], b[1], b[2]]);
            caches.push([c0, c1, c2]);
            vbar.push(v);
        }
        (SpatialTape { beta, caches }, vbar)
    }

    /// Returns `(dquery, dcues)`.
    fn spatial_backward(
        &self,
        grads: &mut Grads,
        tape: &SpatialTape,
        cues: &[[Vec<f64>; 3]],
        dvbar: &[Vec<f64>],
        query_dim: usize,
    ) -> (Vec<f64>, Vec<[Vec<f64>; 3]>) {
        let mlp = self.spatial.as_ref().expect("variant has spatial attention");
        let mut dquery = vec![0.0; query_dim];
        let mut dcues = Vec::with_capacity(cues.len());
        for (j, c) in cues.iter().enumerate() {
            let b = &tape.beta[j];
            let mut dc: [Vec<f64>; 3] = std::array::from_fn(|r| dvbar[j].iter().map(|d| b[r] * d).collect());
            let dbeta: Vec<f64> = (0..3).map(|r| dot(&c[r], &dvbar[j])).collect();
            let dlogits = softmax_backward(b, &dbeta);
            for r in 0..3 {
                let dx = mlp.backward(&self.params, grads, &tape.caches[j][r], dlogits[r]);
                axpy(1.0, &dx[..query_dim], &mut dquery);
                axpy(1.0, &dx[query_dim..], &mut dc[r]);
            }
            dcues.push(dc);
        }
        (dquery, dcues)
    }

    /// Accumulates parameter gradients for `dscores` (gradient of the loss
    /// w.r.t. the scores of `fwd`).
    pub fn backward(&self, input: &EncodedInput, fwd: &Forward, dscores: &[f64], grads: &mut Grads) {
        let p = &self.params;
        let t = &fwd.tape;
        let enc = self.config.sentence_dim();
        let states = 2 * self.config.gru_hidden;
        let w = self.config.w;
        let n = input.steps.len();

        let df = self.answers.score_backward(p, grads, &t.f, dscores);
        let dud = self.proj.backward(p, grads, &t.ud, &df);
        let du = apply_mask(&dud, t.u_mask.as_deref());
        let dctx = &du[..states];
        let mut dq = du[states..].to_vec();

        let mut dh = vec![vec![0.0; states]; n];
        if self.config.variant == Variant::Temporal {
            let tape = t.temporal.as_ref().expect("temporal tape");
            let (dquery, dstates) = self.temporal_backward(grads, tape, &t.main.outputs, dctx, enc);
            axpy(1.0, &dquery, &mut dq);
            dh = dstates;
        } else {
            dh[w].copy_from_slice(dctx);
        }
        let dh_raw: Vec<Vec<f64>> = dh.iter().zip(&t.main.masks).map(|(d, m)| apply_mask(d, m.as_deref())).collect();
        let dxs = self.gru.backward(p, grads, &t.main.cache, &dh_raw);

        let mut dsd: Vec<Vec<f64>> = dxs.iter().map(|dx| dx[..enc].to_vec()).collect();
        let mut dcues: Vec<[Vec<f64>; 3]> = match self.config.variant {
            Variant::Base | Variant::Temporal => {
                let a = self.config.answer_dim;
                dxs.iter()
                    .map(|dx| std::array::from_fn(|r| dx[enc + r * a..enc + (r + 1) * a].to_vec()))
                    .collect()
            }
            Variant::Spatial => {
                let dvbar: Vec<Vec<f64>> = dxs.iter().map(|dx| dx[enc..].to_vec()).collect();
                let tape = t.spatial.as_ref().expect("spatial tape");
                let (dquery, dc) = self.spatial_backward(grads, tape, &t.cues, &dvbar, enc);
                axpy(1.0, &dquery, &mut dq);
                dc
            }
            Variant::Dual => {
                let dvbar: Vec<Vec<f64>> = dxs.iter().map(|dx| dx[enc..].to_vec()).collect();
                let stape = t.spatial.as_ref().expect("spatial tape");
                let (dtau, dc) = self.spatial_backward(grads, stape, &t.cues, &dvbar, states);
                let ttape = t.temporal.as_ref().expect("temporal tape");
                let transcript = t.transcript.as_ref().expect("transcript tape");
                let _ = &t.tau;
                let (dquery, dh1d) = self.temporal_backward(grads, ttape, &transcript.outputs, &dtau, enc);
                axpy(1.0, &dquery, &mut dq);
                let dh1: Vec<Vec<f64>> = dh1d
                    .iter()
                    .zip(&transcript.masks)
                    .map(|(d, m)| apply_mask(d, m.as_deref()))
                    .collect();
                let tgru = self.transcript_gru.as_ref().expect("dual has transcript gru");
                let dsd1 = tgru.backward(p, grads, &transcript.cache, &dh1);
                for (a, b) in dsd.iter_mut().zip(&dsd1) {
                    axpy(1.0, b, a);
                }
                dc
            }
        };

        for (j, step) in input.steps.iter().enumerate() {
            encode_cues_backward(grads, &step.cues, &self.answers, &self.none, &dcues[j]);
            let ds = apply_mask(&dsd[j], t.s_masks[j].as_deref());
            self.cnn.backward(p, grads, &t.s_caches[j], &ds);
        }
        dcues.clear();
        let dq_raw = apply_mask(&dq, t.q_mask.as_deref());
        self.cnn.backward(p, grads, &t.q_cache, &dq_raw);
        let _ = &t.qd;
    }

    /// Forward, loss and backward for one example; returns the loss.
    pub fn accumulate(
        &self,
        input: &EncodedInput,
        gold: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut Grads,
    ) -> Result<f64> {
        let fwd = self.run(
            input,
            ForwardOptions {
                dropout_rng,
                force_temporal: None,
            },
        )?;
        let (l, dscores) = loss_and_grad(&fwd.scores, gold)?;
        self.backward(input, &fwd, &dscores, grads);
        Ok(l)
    }

    /// Eval-mode loss, used by finite differences.
    pub fn eval_loss(&self, input: &EncodedInput, gold: usize) -> Result<f64> {
        loss(&self.run(input, ForwardOptions::default())?.scores, gold)
    }

    /// Adds uniform noise in `[-scale, scale]` to every trainable value
    /// except the PAD row. Zero-initialised conv biases put all-PAD
    /// sentences exactly on the ReLU kink, where finite differences are
    /// meaningless; checks jitter first.
    pub fn jitter(&mut self, scale: f64, seed: u64) {
        let mut rng = rng::stream(seed, &[0x717e]);
        let embed = self.cnn.embed.id;
        for (pi, p) in self.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let skip = if pi == embed { p.cols } else { 0 };
            for v in &mut p.value[skip..] {
                *v += rng.gen_range(-scale..=scale);
            }
        }
    }

    /// Dropout mask stream for one training example in one epoch.
    pub fn dropout_stream(seed: u64, epoch: usize, example: usize) -> ChaCha8Rng {
        rng::stream(seed, &[0xd409, epoch as u64, example as u64])
    }
}

/// `-log softmax(scores)[gold]` over the whole pool.
pub fn loss(scores: &[f64], gold: usize) -> Result<f64> {
    if gold >= scores.len() {
        return Err(Error::IndexOutOfRange {
            index: gold,
            len: scores.len(),
        });
    }
    Ok(log_sum_exp(scores) - scores[gold])
}

pub fn loss_and_grad(scores: &[f64], gold: usize) -> Result<(f64, Vec<f64>)> {
    let l = loss(scores, gold)?;
    let mut d = softmax(scores);
    d[gold] -= 1.0;
    Ok((l, d))
}

/// 1 + number of candidates scoring strictly higher than the gold one.
pub fn rank_of(scores: &[f64], gold: usize) -> Result<usize> {
    let g = *scores.get(gold).ok_or(Error::IndexOutOfRange {
        index: gold,
        len: scores.len(),
    })?;
    Ok(1 + scores.iter().filter(|&&s| s > g).count())
}

/// Draws a random model input for tests and gradient checks.
pub fn random_input(model: &QAModel, rng: &mut impl Rng) -> EncodedInput {
    let n = 2 * model.config.w + 1;
    let vocab = model.vocab.len();
    let pool = model.pool.len();
    let tokens = |rng: &mut dyn rand::RngCore| -> Vec<usize> {
        let len = rng.gen_range(0..8);
        (0..len).map(|_| rng.gen_range(1..vocab.max(2))).collect()
    };
    let question = tokens(rng);
    let pad_left = rng.gen_range(0..=model.config.w);
    let pad_right = rng.gen_range(0..=model.config.w);
    let steps = (0..n)
        .map(|j| {
            let pad = j < pad_left || j >= n - pad_right;
            if pad {
                return StepInput {
                    tokens: Vec::new(),
                    cues: [None; 3],
                    pad: true,
                };
            }
            let cues = std::array::from_fn(|_| {
                (pool > 0 && rng.gen_bool(0.6)).then(|| rng.gen_range(0..pool))
            });
            StepInput {
                tokens: tokens(rng),
                cues,
                pad,
            }
        })
        .collect();
    EncodedInput { question, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_model(variant: Variant) -> QAModel {
        let vocab = Vocabulary::from_tokens((0..12).map(|i| format!("t{i}")).collect(), 1);
        let pool = AnswerPool::from_ids((0..4).map(|i| format!("a{i}")).collect());
        let cfg = ModelConfig {
            seed: 5,
            ..ModelConfig::miniature(variant)
        };
        QAModel::new(cfg, vocab, pool, None, None).unwrap()
    }

    #[test]
    fn loss_examples() {
        let n = 7;
        assert!((loss(&vec![0.3; n], 2).unwrap() - (n as f64).ln()).abs() < 1e-12);
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((loss(&[1.0, 2.0, 3.0], 2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.4076).abs() < 1e-4);
        assert!(loss(&[1000.0, 0.0, 0.0], 0).unwrap() < 1e-12);
        assert!(loss(&[1.0], 1).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], 1).unwrap(), 1);
        assert_eq!(rank_of(&[0.9, 0.5, 0.7], 2).unwrap(), 2);
        assert_eq!(rank_of(&[0.4; 5], 3).unwrap(), 1);
    }

    #[test]
    fn scores_cover_pool_and_traces_normalise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in Variant::ALL {
            let model = toy_model(v);
            let input = random_input(&model, &mut rng);
            let fwd = model.run(&input, ForwardOptions::default()).unwrap();
            assert_eq!(fwd.scores.len(), 4);
            assert_eq!(fwd.trace.temporal.is_some(), v.has_temporal());
            assert_eq!(fwd.trace.spatial.is_some(), v.has_spatial());
            if let Some(a) = &fwd.trace.temporal {
                assert_eq!(a.len(), 3);
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_attention_weights_give_uniform_alpha() {
        let mut model = toy_model(Variant::Temporal);
        let mlp = model.temporal.unwrap();
        model.params.get_mut(mlp.v).value.iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut input = random_input(&model, &mut rng);
        for s in &mut input.steps {
            s.pad = false;
        }
        let fwd = model.run(&input, ForwardOptions::default()).unwrap();
        for a in fwd.trace.temporal.unwrap() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pads_get_no_temporal_weight() {
        let model = toy_model(Variant::Temporal);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut input = random_input(&model, &mut rng);
        input.steps[0].pad = true;
        let fwd = model.run(&input, ForwardOptions::default()).unwrap();
        assert_eq!(fwd.trace.temporal.unwrap()[0], 0.0);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let model = toy_model(Variant::Base);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut input = random_input(&model, &mut rng);
        input.steps.pop();
        assert!(model.run(&input, ForwardOptions::default()).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_is_not() {
        let mut model = toy_model(Variant::Dual);
        model.config.dropout = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_input(&model, &mut rng);
        let a = model.run(&input, ForwardOptions::default()).unwrap().scores;
        let b = model.run(&input, ForwardOptions::default()).unwrap().scores;
        assert_eq!(a, b);
        let mut drng = QAModel::dropout_stream(1, 0, 0);
        let c = model
            .run(
                &input,
                ForwardOptions {
                    dropout_rng: Some(&mut drng),
                    force_temporal: None,
                },
            )
            .unwrap()
            .scores;
        assert_ne!(a, c);
    }

    #[test]
    fn permuting_the_pool_permutes_scores() {
        let model = toy_model(Variant::Spatial);
        let perm = [2usize, 0, 3, 1];
        let mut other = model.clone();
        other.pool = AnswerPool::from_ids(perm.iter().map(|&i| model.pool.ids()[i].clone()).collect());
        let dim = model.answers.dim;
        let src = model.params.get(model.answers.id).value.clone();
        let dst = &mut other.params.get_mut(other.answers.id).value;
        for (new, &old) in perm.iter().enumerate() {
            dst[new * dim..(new + 1) * dim].copy_from_slice(&src[old * dim..(old + 1) * dim]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut input = random_input(&model, &mut rng);
        let fwd = model.run(&input, ForwardOptions::default()).unwrap();
        for s in &mut input.steps {
            for slot in s.cues.iter_mut().flatten() {
                *slot = perm.iter().position(|&o| o == *slot).unwrap();
            }
        }
        let fwd2 = other.run(&input, ForwardOptions::default()).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((fwd2.scores[new] - fwd.scores[old]).abs() < 1e-12);
        }
    }
}
