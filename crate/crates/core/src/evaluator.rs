//! Ranking metrics, ablations, cue-error stratification and attention dumps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{context_window, ContextMask, CueAnnotation, Dataset, SegmentKey, Stream};
use crate::encoders::AnswerInit;
use crate::error::{Error, Result};
use crate::fusion::{rank_of, EncodedInput, ForwardOptions, ModelConfig, QAModel};
use crate::kb::{answer_pool, KnowledgeBase};
use crate::trainer::{fit, FitData, TrainConfig};

/// Which cue annotations feed the model at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CueSource {
    #[default]
    Gold,
    Predicted,
}

/// A triple ready for the model: encoded window plus gold pool index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: EncodedInput,
    pub gold: usize,
}

pub fn prepare_examples(model: &QAModel, dataset: &Dataset) -> Result<Vec<Example>> {
    dataset
        .triples
        .iter()
        .map(|t| {
            let gold = model
                .pool
                .index_of(&t.answer_id)
                .ok_or_else(|| Error::UnknownCandidate(t.answer_id.clone()))?;
            let window = context_window(dataset, t, model.config.w);
            Ok(Example {
                id: t.id.clone(),
                input: model.encode_input(&window)?,
                gold,
            })
        })
        .collect()
}

/// Eval-mode rank of every example, in input order.
pub fn rank_examples(model: &QAModel, examples: &[Example]) -> Result<Vec<usize>> {
    examples
        .par_iter()
        .map(|ex| {
            let fwd = model.run(&ex.input, ForwardOptions::default())?;
            rank_of(&fwd.scores, ex.gold)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub avg_rank: f64,
}

impl Metrics {
    /// `None` for an empty rank list.
    pub fn from_ranks(ranks: &[usize]) -> Option<Metrics> {
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Some(Metrics {
            count: ranks.len(),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            r1: recall(1),
            r5: recall(5),
            r10: recall(10),
            avg_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Option<Metrics>,
    pub cue_source: CueSource,
    pub triple_ids: Vec<String>,
    pub ranks: Vec<usize>,
    /// Hash of model config, vocabulary, pool, data and cue source.
    pub fingerprint: String,
}

/// Evaluates on `dataset`, swapping in `predicted` cues when asked.
pub fn evaluate(
    model: &QAModel,
    kb: &KnowledgeBase,
    dataset: &Dataset,
    cue_source: CueSource,
    predicted: Option<&HashMap<SegmentKey, CueAnnotation>>,
) -> Result<EvalReport> {
    if answer_pool(kb).fingerprint() != model.pool.fingerprint() {
        return Err(Error::CheckpointMismatch(
            "model answer pool does not match the knowledge base".into(),
        ));
    }
    let swapped;
    let data = match cue_source {
        CueSource::Gold => dataset,
        CueSource::Predicted => {
            let cues = predicted.ok_or_else(|| Error::Config("predicted cue source needs predicted cues".into()))?;
            swapped = dataset.with_cues(cues.clone());
            &swapped
        }
    };
    let examples = prepare_examples(model, data)?;
    let ranks = rank_examples(model, &examples)?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&model.config).expect("config serialises"));
    h.update(model.vocab.fingerprint());
    h.update(model.pool.fingerprint());
    h.update(data.fingerprint());
    h.update(format!("{cue_source:?}"));
    Ok(EvalReport {
        metrics: Metrics::from_ranks(&ranks),
        cue_source,
        triple_ids: examples.into_iter().map(|e| e.id).collect(),
        ranks,
        fingerprint: hex::encode(h.finalize()),
    })
}

/// Aligned-column table of named metric rows.
pub fn format_table(rows: &[(String, Option<Metrics>)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>7}  {:>7}  {:>7}  {:>7}  {:>9}",
        "config", "n", "MRR", "R@1", "R@5", "R@10", "AvgRank"
    );
    for (name, m) in rows {
        match m {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>9.2}",
                    name, m.count, m.mrr, m.r1, m.r5, m.r10, m.avg_rank
                );
            }
            None => {
                let _ = writeln!(out, "{name:<width$}  {:>6}", 0);
            }
        }
    }
    out
}

/// One configuration of an ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub context: ContextMask,
    pub answer_init: AnswerInit,
}

impl AblationRow {
    pub fn new(name: &str, transcript: bool, cues: bool, answer_init: AnswerInit) -> Self {
        AblationRow {
            name: name.to_string(),
            context: ContextMask { transcript, cues },
            answer_init,
        }
    }

    /// Question only, plus transcript, plus cues, both, both with graph init.
    pub fn standard() -> Vec<AblationRow> {
        vec![
            AblationRow::new("Q", false, false, AnswerInit::Random),
            AblationRow::new("Q+T", true, false, AnswerInit::Random),
            AblationRow::new("Q+V", false, true, AnswerInit::Random),
            AblationRow::new("Q+T+V", true, true, AnswerInit::Random),
            AblationRow::new("Q+T+V+GE", true, true, AnswerInit::Graph),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub selected_epoch: Option<usize>,
    pub report: EvalReport,
}

/// Trains and evaluates one model per row on fixed data.
pub fn ablation(
    rows: &[AblationRow],
    data: FitData<'_>,
    test: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationResult>> {
    rows.iter()
        .map(|row| {
            let cfg = ModelConfig {
                context: row.context,
                answer_init: row.answer_init,
                ..model_cfg.clone()
            };
            let (model, history) = fit(data, &cfg, train_cfg)?;
            let report = evaluate(&model, data.kb, test, CueSource::Gold, None)?;
            log::info!("ablation {}: {:?}", row.name, report.metrics);
            Ok(AblationResult {
                name: row.name.clone(),
                selected_epoch: history.selected_epoch,
                report,
            })
        })
        .collect()
}

/// Which fraction of the gold cue slots in a window were predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueBucket {
    Wrong,
    Partial,
    Correct,
}

/// Slot-level comparison over one window; `None` when the window has no
/// gold cue at all.
pub fn classify_window(gold: &[CueAnnotation], predicted: &[CueAnnotation]) -> Option<CueBucket> {
    let mut present = 0;
    let mut matched = 0;
    for (g, p) in gold.iter().zip(predicted) {
        for s in Stream::ALL {
            if let Some(gv) = g.get(s) {
                present += 1;
                if p.get(s) == Some(gv) {
                    matched += 1;
                }
            }
        }
    }
    match (present, matched) {
        (0, _) => None,
        (p, m) if m == p => Some(CueBucket::Correct),
        (_, 0) => Some(CueBucket::Wrong),
        _ => Some(CueBucket::Partial),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifyReport {
    pub wrong: Option<Metrics>,
    pub partial: Option<Metrics>,
    pub correct: Option<Metrics>,
    /// Triples whose window carries no gold cue.
    pub cue_free: usize,
    pub buckets: Vec<(String, Option<CueBucket>)>,
}

/// Buckets per-triple ranks by how well the predicted cues match gold
/// ones across each triple's window.
pub fn stratify_by_cue_error(
    dataset: &Dataset,
    ranks: &HashMap<String, usize>,
    predicted: &HashMap<SegmentKey, CueAnnotation>,
    w: usize,
) -> Result<StratifyReport> {
    let absent = CueAnnotation::default();
    let mut by_bucket: HashMap<CueBucket, Vec<usize>> = HashMap::new();
    let mut cue_free = 0;
    let mut buckets = Vec::with_capacity(dataset.triples.len());
    for t in &dataset.triples {
        let rank = *ranks
            .get(&t.id)
            .ok_or_else(|| Error::InvalidRecord {
                record: t.id.clone(),
                message: "no rank for triple".into(),
            })?;
        let window = context_window(dataset, t, w);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for step in &window.steps {
            if let Some(idx) = step.sentence {
                gold.push(step.cues.clone());
                pred.push(predicted.get(&(t.video_id.clone(), idx)).unwrap_or(&absent).clone());
            }
        }
        let bucket = classify_window(&gold, &pred);
        match bucket {
            Some(b) => by_bucket.entry(b).or_default().push(rank),
            None => cue_free += 1,
        }
        buckets.push((t.id.clone(), bucket));
    }
    let metrics = |b: CueBucket| by_bucket.get(&b).and_then(|r| Metrics::from_ranks(r));
    Ok(StratifyReport {
        wrong: metrics(CueBucket::Wrong),
        partial: metrics(CueBucket::Partial),
        correct: metrics(CueBucket::Correct),
        cue_free,
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepWeight {
    pub step: usize,
    pub offset: i64,
    pub sentence: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamWeights {
    pub step: usize,
    pub offset: i64,
    pub sentence: Option<usize>,
    pub tool: f64,
    pub panel: f64,
    pub dialog: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub triple_id: String,
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub temporal: Option<Vec<StepWeight>>,
    pub spatial: Option<Vec<StreamWeights>>,
}

/// Attention weights of every triple, labelled by step and stream.
pub fn dump_attention(model: &QAModel, dataset: &Dataset) -> Result<Vec<AttentionRecord>> {
    let w = model.config.w as i64;
    dataset
        .triples
        .par_iter()
        .map(|t| {
            let window = context_window(dataset, t, model.config.w);
            let sentences: Vec<Option<usize>> = window.steps.iter().map(|s| s.sentence).collect();
            let (_, trace) = model.forward(&window)?;
            let temporal = trace.temporal.map(|a| {
                a.iter()
                    .enumerate()
                    .map(|(j, &weight)| StepWeight {
                        step: j,
                        offset: j as i64 - w,
                        sentence: sentences[j],
                        weight,
                    })
                    .collect::<Vec<_>>()
            });
            let spatial = trace.spatial.map(|b| {
                b.iter()
                    .enumerate()
                    .map(|(j, b)| StreamWeights {
                        step: j,
                        offset: j as i64 - w,
                        sentence: sentences[j],
                        tool: b[0],
                        panel: b[1],
                        dialog: b[2],
                    })
                    .collect::<Vec<_>>()
            });
            let note = (temporal.is_none() && spatial.is_none())
                .then(|| format!("variant {} has no attention", model.variant().as_str()));
            Ok(AttentionRecord {
                triple_id: t.id.clone(),
                variant: model.variant().as_str().to_string(),
                note,
                temporal,
                spatial,
            })
        })
        .collect()
}

pub fn save_attention(records: &[AttentionRecord], path: &Path) -> Result<()> {
    crate::corpus::write_jsonl(path, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cue(tool: Option<&str>, panel: Option<&str>) -> CueAnnotation {
        CueAnnotation {
            tool: tool.map(String::from),
            panel: panel.map(String::from),
            dialog: None,
        }
    }

    #[test]
    fn metric_examples() {
        let m = Metrics::from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((m.mrr, m.r1, m.r5, m.r10, m.avg_rank), (1.0, 1.0, 1.0, 1.0, 1.0));
        let m = Metrics::from_ranks(&[1, 4]).unwrap();
        assert_eq!(m.mrr, 0.625);
        assert_eq!(m.r1, 0.5);
        assert_eq!(m.r5, 1.0);
        assert_eq!(m.avg_rank, 2.5);
        assert!(Metrics::from_ranks(&[]).is_none());
    }

    #[test]
    fn window_buckets() {
        let gold = vec![cue(Some("a"), Some("p")), cue(None, None)];
        assert_eq!(classify_window(&gold, &gold), Some(CueBucket::Correct));
        let none = vec![cue(None, None); 2];
        assert_eq!(classify_window(&gold, &none), Some(CueBucket::Wrong));
        let half = vec![cue(Some("a"), Some("q")), cue(Some("x"), None)];
        assert_eq!(classify_window(&gold, &half), Some(CueBucket::Partial));
        assert_eq!(classify_window(&none, &half), None);
    }

    #[test]
    fn table_has_header_and_rows() {
        let t = format_table(&[("full".into(), Metrics::from_ranks(&[1, 2])), ("empty".into(), None)]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.starts_with("config"));
    }
}
