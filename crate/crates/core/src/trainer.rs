//! Adam training with per-epoch dev selection, plus the finite-difference
//! gradient check.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary};
use crate::cues::WordVectors;
use crate::error::{Error, Result};
use crate::evaluator::{prepare_examples, rank_examples, Example, Metrics};
use crate::fusion::{ModelConfig, QAModel};
use crate::graphembed::NodeEmbeddings;
use crate::kb::{answer_pool, KnowledgeBase};
use crate::nn::{Grads, Params};
use crate::rng;

/// Gradient chunks per batch. Chunks are reduced in a fixed order so the
/// summed gradient does not depend on the thread count.
const CHUNKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 100,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("train.lr and train.eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.data[i]);
            for k in 0..p.value.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                p.value[k] -= cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based; `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
    /// Milliseconds per epoch. Kept apart from the records so that two
    /// identical runs compare equal.
    #[serde(skip)]
    pub wall_ms: Vec<u128>,
}

/// Mean loss and gradient of one batch.
fn batch_gradient(
    model: &QAModel,
    examples: &[Example],
    batch: &[usize],
    seed: u64,
    epoch: usize,
) -> Result<(f64, Grads)> {
    let chunk = batch.len().div_ceil(CHUNKS).max(1);
    let parts: Vec<(f64, Grads)> = batch
        .par_chunks(chunk)
        .map(|idx| {
            let mut grads = Grads::zeros_like(&model.params);
            let mut loss = 0.0;
            for &i in idx {
                let mut drng = QAModel::dropout_stream(seed, epoch, i);
                loss += model.accumulate(&examples[i].input, examples[i].gold, Some(&mut drng), &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut total = Grads::zeros_like(&model.params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

fn norms_summary(params: &Params) -> String {
    params
        .norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One optimisation step on `batch`; returns the batch loss.
pub fn train_step(
    model: &mut QAModel,
    adam: &mut Adam,
    examples: &[Example],
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch_id: usize,
) -> Result<f64> {
    let (loss, grads) = batch_gradient(model, examples, batch, cfg.seed, epoch)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            batch: batch_id,
            norms: norms_summary(&model.params),
        });
    }
    adam.step(&mut model.params, &grads, cfg);
    Ok(loss)
}

/// Trains for `cfg.max_epochs` and returns the parameters of the epoch with
/// the best dev R@1 (earliest on ties; last epoch when dev is empty).
pub fn train(
    mut model: QAModel,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
) -> Result<(QAModel, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut adam = Adam::new(&model.params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Params)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng::stream(cfg.seed, &[0x7a11, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_step(&mut model, &mut adam, train_set, batch, cfg, epoch, b)?;
            loss_sum += loss * batch.len() as f64;
        }
        let dev = if dev_set.is_empty() {
            None
        } else {
            Metrics::from_ranks(&rank_examples(&model, dev_set)?)
        };
        let score = dev.map_or(f64::NEG_INFINITY, |m| m.r1);
        if dev.is_none() || best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model.params.clone()));
            history.selected_epoch = Some(epoch);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        log::info!(
            "epoch {epoch}: loss {train_loss:.5}{}",
            dev.map(|m| format!(", dev R@1 {:.4}", m.r1)).unwrap_or_default()
        );
        history.epochs.push(EpochRecord { epoch, train_loss, dev });
        history.wall_ms.push(start.elapsed().as_millis());
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// Everything `fit` needs besides the configs.
#[derive(Clone, Copy)]
pub struct FitData<'a> {
    pub kb: &'a KnowledgeBase,
    pub train: &'a Dataset,
    pub dev: &'a Dataset,
    pub vocab: &'a Vocabulary,
    pub graph: Option<&'a NodeEmbeddings>,
    pub word_vectors: Option<&'a WordVectors>,
}

/// Builds a fresh model over the KB's answer pool and trains it.
pub fn fit(data: FitData<'_>, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<(QAModel, TrainHistory)> {
    let model = QAModel::new(
        model_cfg.clone(),
        data.vocab.clone(),
        answer_pool(data.kb),
        data.word_vectors,
        data.graph,
    )?;
    let train_set = prepare_examples(&model, data.train)?;
    let dev_set = prepare_examples(&model, data.dev)?;
    train(model, &train_set, &dev_set, train_cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Floor on the denominator so that coordinates whose gradient is
/// numerically zero are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the summed eval-mode loss over `batch`
/// with central differences. `subsample` picks that many random
/// coordinates instead of all of them. Frozen parameters and the PAD
/// embedding row are skipped.
pub fn gradient_check(
    model: &QAModel,
    batch: &[Example],
    epsilon: f64,
    subsample: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut grads = Grads::zeros_like(&model.params);
    for ex in batch {
        model.accumulate(&ex.input, ex.gold, None, &mut grads)?;
    }
    let embed = model.cnn.embed.id;
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in model.params.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let skip = if pi == embed { p.cols } else { 0 };
        coords.extend((skip..p.value.len()).map(|k| (pi, k)));
    }
    if let Some(k) = subsample {
        if k == 0 {
            log::warn!("gradient check asked for zero coordinates; nothing compared");
            return Ok(GradCheckReport {
                max_rel_error: 0.0,
                checked: 0,
                worst: None,
            });
        }
        coords.shuffle(&mut rng::stream(seed, &[0x6c4e]));
        coords.truncate(k);
    }
    let total_loss = |m: &QAModel| -> Result<f64> { batch.iter().map(|ex| m.eval_loss(&ex.input, ex.gold)).sum() };
    let results: Vec<(f64, usize, usize)> = coords
        .par_chunks(64)
        .map(|part| {
            let mut probe = model.clone();
            part.iter()
                .map(|&(pi, k)| {
                    let orig = probe.params.get(pi).value[k];
                    probe.params.get_mut(pi).value[k] = orig + epsilon;
                    let plus = total_loss(&probe)?;
                    probe.params.get_mut(pi).value[k] = orig - epsilon;
                    let minus = total_loss(&probe)?;
                    probe.params.get_mut(pi).value[k] = orig;
                    let numeric = (plus - minus) / (2.0 * epsilon);
                    Ok((relative_error(grads.data[pi][k], numeric), pi, k))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let worst = results
        .iter()
        .copied()
        .fold(None, |acc: Option<(f64, usize, usize)>, r| match acc {
            Some(a) if a.0 >= r.0 => Some(a),
            _ => Some(r),
        });
    Ok(GradCheckReport {
        max_rel_error: worst.map_or(0.0, |w| w.0),
        checked: results.len(),
        worst: worst.map(|(_, pi, k)| (model.params.get(pi).name.clone(), k)),
    })
}
