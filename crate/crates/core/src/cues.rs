//! One-shot recognition of panels and dialogs from OCR word bags.
//!
//! A test bag is compared against one reference bag per candidate: every
//! distinct test word finds its nearest reference word in embedding space,
//! contributes `count / distance`, and the candidate with the largest total
//! wins.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, CueAnnotation, Region, SegmentKey, Stream, VideoContext};
use crate::error::{Error, Result};
use crate::graphembed::load_embeddings;
use crate::kb::{EntityType, KnowledgeBase};
use crate::rng;

/// Lower bound on nearest-word distance so exact matches stay finite.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Word → positive count, lowercased.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBag(BTreeMap<String, u32>);

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<'a>(counts: impl IntoIterator<Item = (&'a str, u32)>) -> Self {
        let mut bag = TokenBag::new();
        for (w, c) in counts {
            bag.add(w, c);
        }
        bag
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_counts(tokens.into_iter().map(|t| (t, 1)))
    }

    pub fn add(&mut self, word: &str, count: u32) {
        if count > 0 {
            *self.0.entry(word.to_lowercase()).or_default() += count;
        }
    }

    pub fn merge(&mut self, other: &TokenBag) {
        for (w, &c) in &other.0 {
            self.add(w, c);
        }
    }

    /// Number of distinct words.
    pub fn distinct(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(w, &c)| (w.as_str(), c))
    }

    pub fn to_counts(&self) -> BTreeMap<String, u32> {
        self.0.clone()
    }
}

/// Word vectors with deterministic pseudo-random unit vectors for
/// out-of-vocabulary words.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: &str, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "word `{word}` has {} values, expected {}",
                v.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.to_lowercase(), v);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let emb = load_embeddings(path)?;
        let mut wv = WordVectors::new(emb.dim());
        for (i, w) in emb.ids().iter().enumerate() {
            wv.insert(w, emb.row(i).to_vec())?;
        }
        Ok(wv)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Cow<'_, [f64]> {
        match self.vectors.get(word) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(oov_vector(word, self.dim)),
        }
    }
}

fn oov_vector(word: &str, dim: usize) -> Vec<f64> {
    let mut rng = rng::stream(rng::hash_str(word), &[0x00f]);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn similarity_with(test: &[(Vec<f64>, u32)], train: &[Vec<f64>]) -> f64 {
    if test.is_empty() || train.is_empty() {
        return 0.0;
    }
    test.iter()
        .map(|(tv, count)| {
            let min = train
                .iter()
                .map(|rv| euclidean(tv, rv))
                .fold(f64::INFINITY, f64::min);
            *count as f64 / min.max(MIN_DISTANCE)
        })
        .sum()
}

fn embed_bag(bag: &TokenBag, wv: &WordVectors) -> Vec<(Vec<f64>, u32)> {
    bag.iter().map(|(w, c)| (wv.get(w).into_owned(), c)).collect()
}

pub fn bag_similarity(test: &TokenBag, train: &TokenBag, wv: &WordVectors) -> f64 {
    let train: Vec<Vec<f64>> = train.iter().map(|(w, _)| wv.get(w).into_owned()).collect();
    similarity_with(&embed_bag(test, wv), &train)
}

/// Reference bags per region, one per candidate id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CueCatalog {
    pub panels: BTreeMap<String, TokenBag>,
    pub dialogs: BTreeMap<String, TokenBag>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub id: String,
    pub region: Region,
    pub bag: BTreeMap<String, u32>,
}

impl CueCatalog {
    pub fn region(&self, region: Region) -> &BTreeMap<String, TokenBag> {
        match region {
            Region::Panel => &self.panels,
            Region::Dialog => &self.dialogs,
        }
    }

    pub fn insert(&mut self, region: Region, id: &str, bag: TokenBag) {
        match region {
            Region::Panel => self.panels.insert(id.to_string(), bag),
            Region::Dialog => self.dialogs.insert(id.to_string(), bag),
        };
    }

    pub fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        for (region, etype) in [(Region::Panel, EntityType::Panel), (Region::Dialog, EntityType::Dialog)] {
            for id in self.region(region).keys() {
                if kb.entity_type(id) != Some(etype) {
                    return Err(Error::InvalidRecord {
                        record: format!("catalog entry {id}"),
                        message: format!("not a {etype} entity"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let records: Vec<CatalogRecord> = read_jsonl(path.as_ref())?;
        let mut cat = CueCatalog::default();
        for r in records {
            cat.insert(r.region, &r.id, TokenBag::from_counts(r.bag.iter().map(|(w, &c)| (w.as_str(), c))));
        }
        Ok(cat)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let records = [Region::Panel, Region::Dialog].into_iter().flat_map(|region| {
            self.region(region).iter().map(move |(id, bag)| CatalogRecord {
                id: id.clone(),
                region,
                bag: bag.to_counts(),
            })
        });
        write_jsonl(path.as_ref(), records.collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub id: String,
    pub similarity: f64,
}

/// Ranks every candidate of `region` against `test`, best first, ties by id.
pub fn recognize(test: &TokenBag, region: Region, catalog: &CueCatalog, wv: &WordVectors) -> Vec<MatchResult> {
    if test.is_empty() {
        return Vec::new();
    }
    let test_vecs = embed_bag(test, wv);
    let mut out: Vec<MatchResult> = catalog
        .region(region)
        .iter()
        .map(|(id, bag)| {
            let train: Vec<Vec<f64>> = bag.iter().map(|(w, _)| wv.get(w).into_owned()).collect();
            MatchResult {
                id: id.clone(),
                similarity: similarity_with(&test_vecs, &train),
            }
        })
        .collect();
    out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id)));
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolPrediction {
    pub video_id: String,
    pub index: usize,
    #[serde(default)]
    pub tool: Option<String>,
}

pub fn load_tool_predictions(path: impl AsRef<Path>) -> Result<HashMap<SegmentKey, String>> {
    let recs: Vec<ToolPrediction> = read_jsonl(path.as_ref())?;
    Ok(recs
        .into_iter()
        .filter_map(|r| r.tool.map(|t| ((r.video_id, r.index), t)))
        .collect())
}

/// Predicted cue streams for every segment: panel and dialog from the top
/// match of the segment's OCR bags, tool from the external predictions.
pub fn predict_cue_streams(
    ctx: &VideoContext,
    tool_predictions: &HashMap<SegmentKey, String>,
    catalog: &CueCatalog,
    wv: &WordVectors,
    kb: &KnowledgeBase,
) -> Result<HashMap<SegmentKey, CueAnnotation>> {
    for ((vid, idx), tool) in tool_predictions {
        if kb.entity_type(tool) != Some(EntityType::Tool) {
            return Err(Error::InvalidRecord {
                record: format!("tool prediction {vid}#{idx}"),
                message: format!("`{tool}` is not a known tool"),
            });
        }
    }
    let segments: Vec<SegmentKey> = ctx.segments().collect();
    let top = |bag: Option<&TokenBag>, region| {
        bag.and_then(|b| recognize(b, region, catalog, wv).into_iter().next())
            .map(|m| m.id)
    };
    Ok(segments
        .into_par_iter()
        .map(|key| {
            let bags = ctx.ocr.get(&key);
            let cue = CueAnnotation {
                tool: tool_predictions.get(&key).cloned(),
                panel: top(bags.and_then(|b| b.panel.as_ref()), Region::Panel),
                dialog: top(bags.and_then(|b| b.dialog.as_ref()), Region::Dialog),
            };
            (key, cue)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl StreamAccuracy {
    /// `None` when the stream never has a gold cue.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CueAccuracy {
    pub tool: StreamAccuracy,
    pub panel: StreamAccuracy,
    pub dialog: StreamAccuracy,
}

impl CueAccuracy {
    pub fn stream(&self, s: Stream) -> &StreamAccuracy {
        match s {
            Stream::Tool => &self.tool,
            Stream::Panel => &self.panel,
            Stream::Dialog => &self.dialog,
        }
    }
}

/// Per-stream exact-match rate over segments whose gold cue is present.
pub fn cue_accuracy(
    predicted: &HashMap<SegmentKey, CueAnnotation>,
    gold: &HashMap<SegmentKey, CueAnnotation>,
) -> CueAccuracy {
    let mut acc = CueAccuracy::default();
    let absent = CueAnnotation::default();
    for (key, g) in gold {
        let p = predicted.get(key).unwrap_or(&absent);
        for stream in Stream::ALL {
            if let Some(gid) = g.get(stream) {
                let slot = match stream {
                    Stream::Tool => &mut acc.tool,
                    Stream::Panel => &mut acc.panel,
                    Stream::Dialog => &mut acc.dialog,
                };
                slot.total += 1;
                if p.get(stream) == Some(gid) {
                    slot.correct += 1;
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_vectors() -> WordVectors {
        let mut wv = WordVectors::new(2);
        wv.insert("a", vec![0.0, 0.0]).unwrap();
        wv.insert("b", vec![3.0, 4.0]).unwrap();
        wv.insert("c", vec![1.0, 0.0]).unwrap();
        wv
    }

    #[test]
    fn exact_match_is_clamped() {
        let wv = WordVectors::new(4);
        let test = TokenBag::from_tokens(["blur"]);
        let train = TokenBag::from_tokens(["blur", "radius"]);
        assert_eq!(bag_similarity(&test, &train, &wv), 1e6);
    }

    #[test]
    fn empty_bags_score_zero() {
        let wv = toy_vectors();
        let some = TokenBag::from_tokens(["a"]);
        assert_eq!(bag_similarity(&TokenBag::new(), &some, &wv), 0.0);
        assert_eq!(bag_similarity(&some, &TokenBag::new(), &wv), 0.0);
    }

    #[test]
    fn toy_nearest_word() {
        let wv = toy_vectors();
        let test = TokenBag::from_counts([("a", 2)]);
        let train = TokenBag::from_tokens(["b", "c"]);
        assert_eq!(bag_similarity(&test, &train, &wv), 2.0);
    }

    #[test]
    fn oov_vectors_are_deterministic_unit_vectors() {
        let wv = WordVectors::new(8);
        let a = wv.get("histogram");
        assert_eq!(a, wv.get("histogram"));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_ne!(a, wv.get("levels"));
    }

    #[test]
    fn identical_reference_ranks_first() {
        let wv = WordVectors::new(6);
        let mut cat = CueCatalog::default();
        cat.insert(Region::Panel, "layers", TokenBag::from_tokens(["opacity", "fill", "lock"]));
        cat.insert(Region::Panel, "history", TokenBag::from_tokens(["snapshot", "undo"]));
        let res = recognize(&TokenBag::from_tokens(["opacity", "fill", "lock"]), Region::Panel, &cat, &wv);
        assert_eq!(res[0].id, "layers");
        assert_eq!(res.len(), 2);
    }

    #[test]
    fn ties_broken_by_id() {
        let wv = WordVectors::new(6);
        let mut cat = CueCatalog::default();
        let bag = TokenBag::from_tokens(["ok", "cancel"]);
        cat.insert(Region::Dialog, "zeta", bag.clone());
        cat.insert(Region::Dialog, "alpha", bag.clone());
        let res = recognize(&bag, Region::Dialog, &cat, &wv);
        assert_eq!(res[0].id, "alpha");
        assert_eq!(res[0].similarity, res[1].similarity);
    }

    #[test]
    fn empty_test_bag_predicts_nothing() {
        let wv = WordVectors::new(2);
        let mut cat = CueCatalog::default();
        cat.insert(Region::Panel, "p", TokenBag::from_tokens(["x"]));
        assert!(recognize(&TokenBag::new(), Region::Panel, &cat, &wv).is_empty());
    }

    #[test]
    fn accuracy_counts() {
        let key = |i| ("v".to_string(), i);
        let mut gold = HashMap::new();
        for i in 0..10 {
            gold.insert(
                key(i),
                CueAnnotation {
                    panel: Some("p".into()),
                    ..Default::default()
                },
            );
        }
        let perfect = cue_accuracy(&gold, &gold);
        assert_eq!(perfect.panel.accuracy(), Some(1.0));
        assert_eq!(perfect.tool.accuracy(), None);
        let none = cue_accuracy(&HashMap::new(), &gold);
        assert_eq!(none.panel.accuracy(), Some(0.0));
    }
}
