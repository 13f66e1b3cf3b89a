//! Transcripts, QA triples, cue annotations and OCR bags; context windows
//! and vocabularies built on top of them.

mod synth;

pub use synth::{corrupt_bags, synth_clustered, synth_dataset, ClusterSpec, ClusteredOutput, SynthOutput, SynthSpec};

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cues::TokenBag;
use crate::error::{Error, Result};
use crate::kb::{EntityType, KnowledgeBase};
use crate::rng;

/// `(video_id, sentence index)`.
pub type SegmentKey = (String, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub video_id: String,
    pub index: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QATriple {
    pub id: String,
    pub video_id: String,
    pub t: usize,
    pub question_tokens: Vec<String>,
    pub answer_id: String,
}

/// One candidate id per visual stream for a sentence segment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CueAnnotation {
    pub tool: Option<String>,
    pub panel: Option<String>,
    pub dialog: Option<String>,
}

/// The three visual streams, in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Tool,
    Panel,
    Dialog,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Tool, Stream::Panel, Stream::Dialog];

    pub fn entity_type(self) -> EntityType {
        match self {
            Stream::Tool => EntityType::Tool,
            Stream::Panel => EntityType::Panel,
            Stream::Dialog => EntityType::Dialog,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Tool => "tool",
            Stream::Panel => "panel",
            Stream::Dialog => "dialog",
        }
    }
}

impl CueAnnotation {
    pub fn get(&self, stream: Stream) -> Option<&str> {
        match stream {
            Stream::Tool => self.tool.as_deref(),
            Stream::Panel => self.panel.as_deref(),
            Stream::Dialog => self.dialog.as_deref(),
        }
    }

    pub fn slot_mut(&mut self, stream: Stream) -> &mut Option<String> {
        match stream {
            Stream::Tool => &mut self.tool,
            Stream::Panel => &mut self.panel,
            Stream::Dialog => &mut self.dialog,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tool.is_none() && self.panel.is_none() && self.dialog.is_none()
    }
}

/// Record shape of `cues.jsonl`. Optional times pick the winner when several
/// records annotate the same stream of one sentence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CueRecord {
    pub video_id: String,
    pub index: usize,
    #[serde(default)]
    pub tool: Option<String>,
    #[serde(default)]
    pub panel: Option<String>,
    #[serde(default)]
    pub dialog: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Panel,
    Dialog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcrRecord {
    pub video_id: String,
    pub index: usize,
    pub region: Region,
    pub bag: BTreeMap<String, u32>,
}

/// OCR observations for one segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcrBags {
    pub panel: Option<TokenBag>,
    pub dialog: Option<TokenBag>,
}

/// Everything triples point into: sentences, cues and OCR per segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoContext {
    pub videos: BTreeMap<String, Vec<Sentence>>,
    pub cues: HashMap<SegmentKey, CueAnnotation>,
    pub ocr: HashMap<SegmentKey, OcrBags>,
}

impl VideoContext {
    pub fn sentence(&self, video: &str, index: usize) -> Option<&Sentence> {
        self.videos.get(video)?.get(index)
    }

    pub fn cue(&self, video: &str, index: usize) -> Option<&CueAnnotation> {
        self.cues.get(&(video.to_string(), index))
    }

    /// All segments in video then index order.
    pub fn segments(&self) -> impl Iterator<Item = SegmentKey> + '_ {
        self.videos
            .iter()
            .flat_map(|(v, s)| (0..s.len()).map(move |i| (v.clone(), i)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub context: Arc<VideoContext>,
    pub triples: Vec<QATriple>,
}

impl Dataset {
    /// Same context, different triples.
    pub fn with_triples(&self, triples: Vec<QATriple>) -> Dataset {
        Dataset {
            context: Arc::clone(&self.context),
            triples,
        }
    }

    /// Same sentences and triples, cue streams swapped (e.g. for predicted cues).
    pub fn with_cues(&self, cues: HashMap<SegmentKey, CueAnnotation>) -> Dataset {
        let mut ctx = (*self.context).clone();
        ctx.cues = cues;
        Dataset {
            context: Arc::new(ctx),
            triples: self.triples.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Digest over sentences, cues and triples, recorded in run manifests.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (vid, sents) in &self.context.videos {
            h.update(vid.as_bytes());
            for s in sents {
                h.update(s.tokens.join(" ").as_bytes());
                h.update([0]);
                let cue = self.context.cue(vid, s.index).cloned().unwrap_or_default();
                for stream in Stream::ALL {
                    h.update(cue.get(stream).unwrap_or("-").as_bytes());
                    h.update([0]);
                }
            }
        }
        for t in &self.triples {
            h.update(format!("{}|{}|{}|{}|{}", t.id, t.video_id, t.t, t.question_tokens.join(" "), t.answer_id));
        }
        hex::encode(h.finalize())
    }

    /// Checks every cross-file reference against `kb`.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        for (vid, sents) in &self.context.videos {
            for (i, s) in sents.iter().enumerate() {
                if s.index != i {
                    return Err(Error::InvalidRecord {
                        record: format!("sentence {vid}#{}", s.index),
                        message: format!("indices not contiguous (expected {i})"),
                    });
                }
                if s.start_ms > s.end_ms {
                    return Err(Error::InvalidRecord {
                        record: format!("sentence {vid}#{i}"),
                        message: "start_ms after end_ms".into(),
                    });
                }
            }
        }
        for ((vid, idx), cue) in &self.context.cues {
            if self.context.sentence(vid, *idx).is_none() {
                return Err(Error::InvalidRecord {
                    record: format!("cue {vid}#{idx}"),
                    message: "no such sentence".into(),
                });
            }
            validate_cue(kb, cue, &format!("cue {vid}#{idx}"))?;
        }
        for t in &self.triples {
            let len = self.context.videos.get(&t.video_id).map_or(0, Vec::len);
            if t.t >= len {
                return Err(Error::InvalidRecord {
                    record: format!("triple {}", t.id),
                    message: format!("sentence {} out of range for video {} ({len} sentences)", t.t, t.video_id),
                });
            }
            if !kb.contains(&t.answer_id) {
                return Err(Error::InvalidRecord {
                    record: format!("triple {}", t.id),
                    message: format!("unknown answer_id `{}`", t.answer_id),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_cue(kb: &KnowledgeBase, cue: &CueAnnotation, record: &str) -> Result<()> {
    for stream in Stream::ALL {
        if let Some(id) = cue.get(stream) {
            if kb.entity_type(id) != Some(stream.entity_type()) {
                return Err(Error::InvalidRecord {
                    record: record.to_string(),
                    message: format!("{} slot `{id}` is not a {} entity", stream.as_str(), stream.entity_type()),
                });
            }
        }
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, &r).expect("record serializes");
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn lowercase_all(tokens: &mut [String]) {
    for t in tokens {
        *t = t.to_lowercase();
    }
}

fn overlap(a: (u64, u64), b: (u64, u64)) -> u64 {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Merges cue records so each stream of each sentence keeps one id: the one
/// whose record overlaps the sentence span the most (untimed records cover
/// the whole sentence; earlier records win ties).
pub fn merge_cue_records(
    videos: &BTreeMap<String, Vec<Sentence>>,
    records: &[CueRecord],
) -> Result<HashMap<SegmentKey, CueAnnotation>> {
    let mut best: HashMap<(SegmentKey, Stream), (u64, String)> = HashMap::new();
    let mut keys = Vec::new();
    for r in records {
        let sent = videos
            .get(&r.video_id)
            .and_then(|s| s.get(r.index))
            .ok_or_else(|| Error::InvalidRecord {
                record: format!("cue {}#{}", r.video_id, r.index),
                message: "no such sentence".into(),
            })?;
        let span = (sent.start_ms, sent.end_ms);
        let cover = match (r.start_ms, r.end_ms) {
            (Some(s), Some(e)) => overlap(span, (s, e)),
            _ => span.1 - span.0,
        };
        let key = (r.video_id.clone(), r.index);
        keys.push(key.clone());
        let rec = CueAnnotation {
            tool: r.tool.clone(),
            panel: r.panel.clone(),
            dialog: r.dialog.clone(),
        };
        for stream in Stream::ALL {
            if let Some(id) = rec.get(stream) {
                let slot = best.entry((key.clone(), stream)).or_insert((cover, id.to_string()));
                if cover > slot.0 {
                    *slot = (cover, id.to_string());
                }
            }
        }
    }
    let mut out: HashMap<SegmentKey, CueAnnotation> = HashMap::new();
    for key in keys {
        out.entry(key).or_default();
    }
    for ((key, stream), (_, id)) in best {
        *out.entry(key).or_default().slot_mut(stream) = Some(id);
    }
    Ok(out)
}

pub fn load_ocr(path: &Path) -> Result<HashMap<SegmentKey, OcrBags>> {
    let records: Vec<OcrRecord> = read_jsonl(path)?;
    let mut out: HashMap<SegmentKey, OcrBags> = HashMap::new();
    for r in records {
        let bag = TokenBag::from_counts(r.bag.iter().map(|(w, &c)| (w.as_str(), c)));
        let entry = out.entry((r.video_id, r.index)).or_default();
        let slot = match r.region {
            Region::Panel => &mut entry.panel,
            Region::Dialog => &mut entry.dialog,
        };
        match slot {
            Some(existing) => existing.merge(&bag),
            None => *slot = Some(bag),
        }
    }
    Ok(out)
}

/// Loads transcripts, triples, gold cues and (optionally) OCR bags, and
/// validates them against `kb`.
pub fn load_dataset(
    kb: &KnowledgeBase,
    transcript_path: &Path,
    qa_path: &Path,
    cues_path: &Path,
    ocr_path: Option<&Path>,
) -> Result<Dataset> {
    let context = load_context(kb, transcript_path, cues_path, ocr_path)?;
    load_triples(kb, Arc::new(context), qa_path)
}

pub fn load_context(
    kb: &KnowledgeBase,
    transcript_path: &Path,
    cues_path: &Path,
    ocr_path: Option<&Path>,
) -> Result<VideoContext> {
    let mut sentences: Vec<Sentence> = read_jsonl(transcript_path)?;
    let mut videos: BTreeMap<String, Vec<Sentence>> = BTreeMap::new();
    for s in &mut sentences {
        lowercase_all(&mut s.tokens);
    }
    for s in sentences {
        videos.entry(s.video_id.clone()).or_default().push(s);
    }
    for sents in videos.values_mut() {
        sents.sort_by_key(|s| s.index);
    }
    let cue_records: Vec<CueRecord> = read_jsonl(cues_path)?;
    let cues = merge_cue_records(&videos, &cue_records)?;
    let ocr = match ocr_path {
        Some(p) => load_ocr(p)?,
        None => HashMap::new(),
    };
    let ctx = VideoContext { videos, cues, ocr };
    Dataset {
        context: Arc::new(ctx.clone()),
        triples: Vec::new(),
    }
    .validate(kb)?;
    Ok(ctx)
}

pub fn load_triples(kb: &KnowledgeBase, context: Arc<VideoContext>, qa_path: &Path) -> Result<Dataset> {
    let mut triples: Vec<QATriple> = read_jsonl(qa_path)?;
    for t in &mut triples {
        lowercase_all(&mut t.question_tokens);
    }
    let ds = Dataset { context, triples };
    ds.validate(kb)?;
    Ok(ds)
}

/// Writes the context files (`transcripts.jsonl`, `cues.jsonl`, and
/// `ocr.jsonl` when bags exist) into `dir`.
pub fn save_context(ctx: &VideoContext, dir: &Path) -> Result<()> {
    write_jsonl(&dir.join("transcripts.jsonl"), ctx.videos.values().flatten())?;
    let cue_records = ctx.segments().map(|(vid, idx)| {
        let c = ctx.cues.get(&(vid.clone(), idx)).cloned().unwrap_or_default();
        CueRecord {
            video_id: vid,
            index: idx,
            tool: c.tool,
            panel: c.panel,
            dialog: c.dialog,
            start_ms: None,
            end_ms: None,
        }
    });
    write_jsonl(&dir.join("cues.jsonl"), cue_records)?;
    if !ctx.ocr.is_empty() {
        write_jsonl(&dir.join("ocr.jsonl"), ocr_records(ctx))?;
    }
    Ok(())
}

pub fn ocr_records(ctx: &VideoContext) -> Vec<OcrRecord> {
    let mut out = Vec::new();
    for (vid, idx) in ctx.segments() {
        if let Some(bags) = ctx.ocr.get(&(vid.clone(), idx)) {
            for (region, bag) in [(Region::Panel, &bags.panel), (Region::Dialog, &bags.dialog)] {
                if let Some(bag) = bag {
                    out.push(OcrRecord {
                        video_id: vid.clone(),
                        index: idx,
                        region,
                        bag: bag.to_counts(),
                    });
                }
            }
        }
    }
    out
}

/// Writes one untimed record per annotated sentence, in segment order.
pub fn save_cues(cues: &HashMap<SegmentKey, CueAnnotation>, path: &Path) -> Result<()> {
    let mut keys: Vec<&SegmentKey> = cues.keys().collect();
    keys.sort();
    write_jsonl(
        path,
        keys.into_iter().map(|k| {
            let c = &cues[k];
            CueRecord {
                video_id: k.0.clone(),
                index: k.1,
                tool: c.tool.clone(),
                panel: c.panel.clone(),
                dialog: c.dialog.clone(),
                start_ms: None,
                end_ms: None,
            }
        }),
    )
}

/// Reads cue records against the sentences of `ctx`.
pub fn load_cues(ctx: &VideoContext, path: &Path) -> Result<HashMap<SegmentKey, CueAnnotation>> {
    let records: Vec<CueRecord> = read_jsonl(path)?;
    merge_cue_records(&ctx.videos, &records)
}

pub fn save_triples(triples: &[QATriple], path: &Path) -> Result<()> {
    write_jsonl(path, triples)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowStep {
    pub tokens: Vec<String>,
    pub cues: CueAnnotation,
    pub pad: bool,
    /// Source sentence index, `None` for pads.
    pub sentence: Option<usize>,
}

impl WindowStep {
    fn pad() -> Self {
        WindowStep {
            tokens: Vec::new(),
            cues: CueAnnotation::default(),
            pad: true,
            sentence: None,
        }
    }
}

/// `2w+1` steps centred on the question's sentence; the centre is always
/// at position `w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub question_tokens: Vec<String>,
    pub steps: Vec<WindowStep>,
}

impl ContextWindow {
    pub fn w(&self) -> usize {
        self.steps.len() / 2
    }

    pub fn non_pad_count(&self) -> usize {
        self.steps.iter().filter(|s| !s.pad).count()
    }

    /// Drops modalities for ablations. Removed transcripts become empty
    /// sentences, removed cues become absent.
    pub fn masked(mut self, mask: ContextMask) -> Self {
        for step in &mut self.steps {
            if !mask.transcript {
                step.tokens.clear();
            }
            if !mask.cues {
                step.cues = CueAnnotation::default();
            }
        }
        self
    }
}

/// Which context modalities a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMask {
    pub transcript: bool,
    pub cues: bool,
}

impl Default for ContextMask {
    fn default() -> Self {
        ContextMask {
            transcript: true,
            cues: true,
        }
    }
}

pub fn context_window(dataset: &Dataset, triple: &QATriple, w: usize) -> ContextWindow {
    let ctx = &dataset.context;
    let sents = ctx.videos.get(&triple.video_id).map(Vec::as_slice).unwrap_or(&[]);
    let steps = (0..=2 * w)
        .map(|k| {
            let idx = triple.t as i64 + k as i64 - w as i64;
            if idx < 0 || idx as usize >= sents.len() {
                return WindowStep::pad();
            }
            let idx = idx as usize;
            WindowStep {
                tokens: sents[idx].tokens.clone(),
                cues: ctx.cue(&triple.video_id, idx).cloned().unwrap_or_default(),
                pad: false,
                sentence: Some(idx),
            }
        })
        .collect();
    ContextWindow {
        question_tokens: triple.question_tokens.clone(),
        steps,
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRecord")]
pub struct Vocabulary {
    tokens: Vec<String>,
    min_count: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct VocabularyRecord {
    tokens: Vec<String>,
    min_count: usize,
}

impl From<VocabularyRecord> for Vocabulary {
    fn from(r: VocabularyRecord) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: r.tokens,
            min_count: r.min_count,
            index,
        }
    }
}

impl Vocabulary {
    /// Builds from an explicit token list; index 0 and 1 are PAD and UNK.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let mut all = vec!["<pad>".to_string(), "<unk>".to_string()];
        all.extend(tokens);
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: all,
            min_count,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn lookup(&self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// Tokens from all transcripts and the dataset's questions with count at
/// least `min_count`, lowercased, sorted.
pub fn build_vocab(dataset: &Dataset, min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let sentence_tokens = dataset.context.videos.values().flatten().flat_map(|s| s.tokens.iter());
    let question_tokens = dataset.triples.iter().flat_map(|t| t.question_tokens.iter());
    for tok in sentence_tokens.chain(question_tokens) {
        *counts.entry(tok.to_lowercase()).or_default() += 1;
    }
    let kept = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(t, _)| t)
        .collect();
    Vocabulary::from_tokens(kept, min_count)
}

/// Random split into three parts by fractions of train and dev.
pub fn split_triples(
    triples: &[QATriple],
    train_frac: f64,
    dev_frac: f64,
    seed: u64,
) -> (Vec<QATriple>, Vec<QATriple>, Vec<QATriple>) {
    let mut shuffled = triples.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, &[0x5911]));
    let n = shuffled.len();
    let n_train = (n as f64 * train_frac).round() as usize;
    let n_dev = ((n as f64 * dev_frac).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_dev);
    let dev = shuffled.split_off(n_train);
    (shuffled, dev, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(len: usize) -> Dataset {
        let sents = (0..len)
            .map(|i| Sentence {
                video_id: "v".into(),
                index: i,
                start_ms: i as u64 * 1000,
                end_ms: i as u64 * 1000 + 900,
                tokens: vec![format!("s{i}")],
            })
            .collect();
        let mut videos = BTreeMap::new();
        videos.insert("v".to_string(), sents);
        Dataset {
            context: Arc::new(VideoContext {
                videos,
                ..Default::default()
            }),
            triples: Vec::new(),
        }
    }

    fn triple(t: usize) -> QATriple {
        QATriple {
            id: "q".into(),
            video_id: "v".into(),
            t,
            question_tokens: vec!["what".into()],
            answer_id: "a".into(),
        }
    }

    fn sentence_ids(w: &ContextWindow) -> Vec<Option<usize>> {
        w.steps.iter().map(|s| s.sentence).collect()
    }

    #[test]
    fn window_at_start_is_left_padded() {
        let ds = toy_dataset(20);
        let win = context_window(&ds, &triple(0), 5);
        assert_eq!(win.steps.len(), 11);
        assert!(win.steps[..5].iter().all(|s| s.pad && s.tokens.is_empty()));
        assert_eq!(
            sentence_ids(&win)[5..],
            [Some(0), Some(1), Some(2), Some(3), Some(4), Some(5)]
        );
    }

    #[test]
    fn window_in_middle() {
        let ds = toy_dataset(20);
        let win = context_window(&ds, &triple(7), 2);
        assert_eq!(sentence_ids(&win), [Some(5), Some(6), Some(7), Some(8), Some(9)]);
    }

    #[test]
    fn zero_width_window() {
        let ds = toy_dataset(20);
        let win = context_window(&ds, &triple(3), 0);
        assert_eq!(sentence_ids(&win), [Some(3)]);
        assert_eq!(win.steps[0].tokens, ["s3"]);
    }

    #[test]
    fn non_pad_count_formula() {
        for len in 1..8 {
            let ds = toy_dataset(len);
            for t in 0..len {
                for w in 0..5 {
                    let win = context_window(&ds, &triple(t), w);
                    let expected = t.min(w) + (len - 1 - t).min(w) + 1;
                    assert_eq!(win.non_pad_count(), expected);
                    assert_eq!(win.steps[w].sentence, Some(t));
                }
            }
        }
    }

    #[test]
    fn vocab_counts_and_reserved_slots() {
        let mut ds = toy_dataset(0);
        ds.triples = vec![QATriple {
            question_tokens: vec!["layer".into(), "Layer".into(), "blur".into(), "mask".into()],
            ..triple(0)
        }];
        let vocab = build_vocab(&ds, 1);
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.lookup("<pad>"), PAD);
        assert_eq!(vocab.lookup("nope"), UNK);
        assert_eq!(vocab.lookup("LAYER"), vocab.lookup("layer"));
        let none = build_vocab(&ds, usize::MAX);
        assert_eq!(none.len(), 2);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&vocab).unwrap()).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.lookup("blur"), vocab.lookup("blur"));
    }

    #[test]
    fn cue_merge_prefers_largest_overlap() {
        let ds = toy_dataset(2);
        let rec = |tool: &str, s, e| CueRecord {
            video_id: "v".into(),
            index: 1,
            tool: Some(tool.into()),
            panel: None,
            dialog: None,
            start_ms: Some(s),
            end_ms: Some(e),
        };
        let merged =
            merge_cue_records(&ds.context.videos, &[rec("a", 1000, 1200), rec("b", 1100, 1900)]).unwrap();
        assert_eq!(merged[&("v".to_string(), 1)].tool.as_deref(), Some("b"));
    }
}
