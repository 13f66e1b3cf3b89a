//! Desk-scale synthetic screencast corpora.
//!
//! The generated KB is clustered around panels: each panel holds some tools
//! and dialogs, tools have shortcuts, dialogs are opened by menus, and
//! options hang off tools, panels and dialogs. Transcripts mention KB names
//! independently of what is on screen, so each question family needs a
//! different modality:
//!
//! * cue questions ask what tool/panel/dialog is visible at the anchor step;
//! * mention questions ask what the anchor sentence named;
//! * relation questions ask for a KB neighbour (shortcut, owning panel,
//!   opening menu) of the entity the anchor sentence named.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CueAnnotation, Dataset, OcrBags, QATriple, SegmentKey, Sentence, Stream, VideoContext};
use crate::cues::{CueCatalog, TokenBag};
use crate::corpus::Region;
use crate::error::{Error, Result};
use crate::kb::{Entity, EntityType, KnowledgeBase, OptionRecord, Relation, RelationKind};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub sents_per_video: usize,
    pub kb_size: usize,
    pub n_triples: usize,
    pub cue_determined_fraction: f64,
    /// Fraction of OCR words replaced by words of a distractor bag.
    pub ocr_noise: f64,
    /// Fraction of segments whose external tool prediction is wrong.
    pub tool_error: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_videos: 6,
            sents_per_video: 40,
            kb_size: 60,
            n_triples: 600,
            cue_determined_fraction: 0.5,
            ocr_noise: 0.3,
            tool_error: 0.1,
            seed: 7,
        }
    }
}

pub struct SynthOutput {
    pub kb: KnowledgeBase,
    pub dataset: Dataset,
    pub catalog: CueCatalog,
    pub tool_predictions: HashMap<SegmentKey, String>,
}

const FILLER: &[&str] = &[
    "now", "we", "can", "just", "click", "the", "here", "go", "to", "and", "then", "so", "let's", "this", "you",
    "will", "see", "that", "it", "over",
];
const UI_WORDS: &[&str] = &["ok", "cancel", "apply", "reset", "preview", "close"];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "ven", "to", "shi", "ber", "qua", "dex", "ni", "por", "zu", "fel", "gra", "mon", "tic",
    "sal", "vor", "ely",
];

struct Names {
    used: HashSet<String>,
}

impl Names {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.gen_range(2..=3);
            let word: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if !FILLER.contains(&word.as_str()) && !UI_WORDS.contains(&word.as_str()) && self.used.insert(word.clone()) {
                return word;
            }
        }
    }
}

struct KbLayout {
    tools: Vec<String>,
    panels: Vec<String>,
    dialogs: Vec<String>,
    shortcut_of_tool: HashMap<String, String>,
    panel_of: HashMap<String, String>,
    menu_of_dialog: HashMap<String, String>,
    /// Words that can be spoken in a transcript, keyed by candidate id.
    spoken: BTreeMap<String, String>,
}

fn build_kb(size: usize, rng: &mut ChaCha8Rng) -> Result<(KnowledgeBase, KbLayout, CueCatalog)> {
    if size < 5 {
        return Err(Error::Config("synthetic kb_size must be at least 5".into()));
    }
    let n_tools = (size / 6).max(1);
    let n_panels = (size / 12).max(1);
    let n_dialogs = (size / 12).max(1);
    let core = 2 * n_tools + n_panels + 2 * n_dialogs;
    let n_options = size.saturating_sub(core);
    let mut names = Names { used: HashSet::new() };

    let mut entities: BTreeMap<String, Entity> = BTreeMap::new();
    let mut relations = Vec::new();
    let mut layout = KbLayout {
        tools: Vec::new(),
        panels: Vec::new(),
        dialogs: Vec::new(),
        shortcut_of_tool: HashMap::new(),
        panel_of: HashMap::new(),
        menu_of_dialog: HashMap::new(),
        spoken: BTreeMap::new(),
    };
    let mut add = |id: String, etype: EntityType, name: String, layout: &mut KbLayout| {
        if etype != EntityType::Shortcut {
            layout.spoken.insert(id.clone(), name.clone());
        }
        entities.insert(
            id.clone(),
            Entity {
                id,
                name,
                etype,
                options: Vec::new(),
            },
        );
    };
    for p in 0..n_panels {
        let id = format!("panel{p:02}");
        layout.panels.push(id.clone());
        add(id, EntityType::Panel, names.fresh(rng), &mut layout);
    }
    for t in 0..n_tools {
        let id = format!("tool{t:02}");
        let sc = format!("shortcut{t:02}");
        let panel = layout.panels[t % n_panels].clone();
        relations.push(Relation {
            src: sc.clone(),
            dst: id.clone(),
            kind: RelationKind::IsShortcutOf,
        });
        relations.push(Relation {
            src: id.clone(),
            dst: panel.clone(),
            kind: RelationKind::BelongsTo,
        });
        layout.shortcut_of_tool.insert(id.clone(), sc.clone());
        layout.panel_of.insert(id.clone(), panel);
        layout.tools.push(id.clone());
        add(id, EntityType::Tool, names.fresh(rng), &mut layout);
        add(sc, EntityType::Shortcut, format!("ctrl+{}", names.fresh(rng)), &mut layout);
    }
    for d in 0..n_dialogs {
        let id = format!("dialog{d:02}");
        let menu = format!("menu{d:02}");
        let panel = layout.panels[d % n_panels].clone();
        relations.push(Relation {
            src: id.clone(),
            dst: menu.clone(),
            kind: RelationKind::IsOpenedBy,
        });
        relations.push(Relation {
            src: id.clone(),
            dst: panel.clone(),
            kind: RelationKind::BelongsTo,
        });
        layout.menu_of_dialog.insert(id.clone(), menu.clone());
        layout.panel_of.insert(id.clone(), panel);
        layout.dialogs.push(id.clone());
        add(id, EntityType::Dialog, names.fresh(rng), &mut layout);
        add(menu, EntityType::Menu, names.fresh(rng), &mut layout);
    }
    let owners: Vec<String> = layout
        .tools
        .iter()
        .chain(&layout.panels)
        .chain(&layout.dialogs)
        .cloned()
        .collect();
    for k in 0..n_options {
        let owner = &owners[k % owners.len()];
        let e = entities.get_mut(owner).expect("owner exists");
        let id = format!("{owner}.opt{}", e.options.len());
        let name = names.fresh(rng);
        layout.spoken.insert(id.clone(), name.clone());
        e.options.push(OptionRecord { id, name });
    }

    let mut catalog = CueCatalog::default();
    for (region, ids) in [(Region::Panel, &layout.panels), (Region::Dialog, &layout.dialogs)] {
        for id in ids {
            let e = &entities[id];
            let mut bag = TokenBag::from_tokens([e.name.as_str()]);
            for o in &e.options {
                bag.add(&o.name, 1);
            }
            for w in UI_WORDS.choose_multiple(rng, 2) {
                bag.add(w, 1);
            }
            catalog.insert(region, id, bag);
        }
    }
    let kb = KnowledgeBase::new(entities.into_values().collect(), relations)?;
    Ok((kb, layout, catalog))
}

fn markov_pick<'a>(
    prev: Option<&'a String>,
    pool: &'a [String],
    present_p: f64,
    switch_p: f64,
    rng: &mut ChaCha8Rng,
) -> Option<&'a String> {
    if !rng.gen_bool(present_p) {
        return None;
    }
    match prev {
        Some(p) if !rng.gen_bool(switch_p) => Some(p),
        _ => pool.choose(rng),
    }
}

const CUE_QUESTIONS: [(Stream, &[&str]); 6] = [
    (Stream::Tool, &["which", "tool", "is", "selected", "right", "now"]),
    (Stream::Tool, &["what", "tool", "is", "being", "used"]),
    (Stream::Panel, &["which", "panel", "is", "open", "on", "screen"]),
    (Stream::Panel, &["what", "panel", "are", "we", "looking", "at"]),
    (Stream::Dialog, &["which", "dialog", "popped", "up"]),
    (Stream::Dialog, &["what", "dialog", "window", "is", "showing"]),
];
const MENTION_QUESTIONS: [&[&str]; 3] = [
    &["what", "did", "the", "narrator", "just", "mention"],
    &["which", "thing", "was", "named", "in", "this", "sentence"],
    &["what", "was", "just", "talked", "about"],
];

#[derive(Clone, Copy)]
enum Relational {
    Shortcut,
    OwningPanel,
    OpeningMenu,
}

impl Relational {
    fn question(self) -> &'static [&'static str] {
        match self {
            Relational::Shortcut => &["what", "is", "the", "shortcut", "for", "the", "tool", "just", "mentioned"],
            Relational::OwningPanel => &["which", "panel", "contains", "what", "was", "just", "mentioned"],
            Relational::OpeningMenu => &["which", "menu", "opens", "the", "dialog", "just", "mentioned"],
        }
    }
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

/// Deterministic synthetic KB plus dataset. Every call with the same spec
/// returns identical output.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthOutput> {
    if spec.n_videos == 0 || spec.sents_per_video == 0 {
        return Err(Error::Config("synthetic corpus needs at least one video and sentence".into()));
    }
    for (name, f) in [
        ("cue_determined_fraction", spec.cue_determined_fraction),
        ("ocr_noise", spec.ocr_noise),
        ("tool_error", spec.tool_error),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("synth.{name} must lie in [0, 1]")));
        }
    }
    let mut rng = rng::stream(spec.seed, &[0x5e17]);
    let (kb, layout, catalog) = build_kb(spec.kb_size, &mut rng)?;
    let spoken: Vec<(&String, &String)> = layout.spoken.iter().collect();

    let mut videos = BTreeMap::new();
    let mut cues = HashMap::new();
    let mut ocr = HashMap::new();
    let mut mentions: HashMap<SegmentKey, String> = HashMap::new();
    for v in 0..spec.n_videos {
        let vid = format!("vid{v:02}");
        let (mut tool, mut panel) = (None, None);
        let mut sents = Vec::with_capacity(spec.sents_per_video);
        for i in 0..spec.sents_per_video {
            tool = markov_pick(tool, &layout.tools, 1.0, 0.4, &mut rng);
            panel = markov_pick(panel, &layout.panels, 0.7, 0.4, &mut rng);
            let dialog = markov_pick(None, &layout.dialogs, 0.35, 1.0, &mut rng);
            let n_filler = rng.gen_range(3..=6);
            let mut tokens: Vec<String> = (0..n_filler).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
            if rng.gen_bool(0.8) {
                let (id, name) = spoken.choose(&mut rng).unwrap();
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, (*name).clone());
                mentions.insert((vid.clone(), i), (*id).clone());
            }
            let key = (vid.clone(), i);
            let cue = CueAnnotation {
                tool: tool.cloned(),
                panel: panel.cloned(),
                dialog: dialog.cloned(),
            };
            let bags = OcrBags {
                panel: cue.panel.as_ref().map(|p| catalog.panels[p].clone()),
                dialog: cue.dialog.as_ref().map(|d| catalog.dialogs[d].clone()),
            };
            if bags.panel.is_some() || bags.dialog.is_some() {
                ocr.insert(key.clone(), bags);
            }
            cues.insert(key, cue);
            sents.push(Sentence {
                video_id: vid.clone(),
                index: i,
                start_ms: i as u64 * 4000,
                end_ms: i as u64 * 4000 + 3500,
                tokens,
            });
        }
        videos.insert(vid, sents);
    }

    let mut mention_keys: Vec<&SegmentKey> = mentions.keys().collect();
    mention_keys.sort();
    let relational_keys: Vec<(&SegmentKey, Relational)> = mention_keys
        .iter()
        .flat_map(|k| {
            let id = &mentions[*k];
            let mut out = Vec::new();
            if layout.shortcut_of_tool.contains_key(id) {
                out.push((*k, Relational::Shortcut));
            }
            if layout.panel_of.contains_key(id) {
                out.push((*k, Relational::OwningPanel));
            }
            if layout.menu_of_dialog.contains_key(id) {
                out.push((*k, Relational::OpeningMenu));
            }
            out
        })
        .collect();

    let all_keys: Vec<SegmentKey> = videos
        .iter()
        .flat_map(|(v, s)| (0..s.len()).map(move |i| (v.clone(), i)))
        .collect();
    let mut triples = Vec::with_capacity(spec.n_triples);
    for k in 0..spec.n_triples {
        let roll: f64 = rng.gen();
        let mention_side = roll >= spec.cue_determined_fraction;
        let (key, question, answer) = if mention_side && !mention_keys.is_empty() {
            let use_relation = rng.gen_bool(0.5) && !relational_keys.is_empty();
            if use_relation {
                let (key, rel) = *relational_keys.choose(&mut rng).unwrap();
                let subject = &mentions[key];
                let answer = match rel {
                    Relational::Shortcut => &layout.shortcut_of_tool[subject],
                    Relational::OwningPanel => &layout.panel_of[subject],
                    Relational::OpeningMenu => &layout.menu_of_dialog[subject],
                };
                (key.clone(), words(rel.question()), answer.clone())
            } else {
                let key = *mention_keys.choose(&mut rng).unwrap();
                let q = MENTION_QUESTIONS.choose(&mut rng).unwrap();
                (key.clone(), words(q), mentions[key].clone())
            }
        } else {
            let key = all_keys.choose(&mut rng).unwrap().clone();
            let cue = &cues[&key];
            let options: Vec<&(Stream, &[&str])> =
                CUE_QUESTIONS.iter().filter(|(s, _)| cue.get(*s).is_some()).collect();
            let (stream, q) = **options.choose(&mut rng).expect("tool stream always present");
            (key, words(q), cue.get(stream).unwrap().to_string())
        };
        triples.push(QATriple {
            id: format!("q{k:05}"),
            video_id: key.0,
            t: key.1,
            question_tokens: question,
            answer_id: answer,
        });
    }

    // Noise draws come from their own streams so the clean corpus above does
    // not depend on the noise settings.
    let mut keys: Vec<&SegmentKey> = cues.keys().collect();
    keys.sort();
    let mut tool_rng = rng::stream(spec.seed, &[0x7001]);
    let mut tool_predictions = HashMap::new();
    for key in keys {
        let Some(tool) = cues[key].tool.clone() else { continue };
        let predicted = if layout.tools.len() > 1 && tool_rng.gen_bool(spec.tool_error) {
            let others: Vec<&String> = layout.tools.iter().filter(|t| **t != tool).collect();
            (*others.choose(&mut tool_rng).unwrap()).clone()
        } else {
            tool
        };
        tool_predictions.insert(key.clone(), predicted);
    }
    let mut context = VideoContext { videos, cues, ocr };
    if spec.ocr_noise > 0.0 {
        context = corrupt_bags(&context, &catalog, spec.ocr_noise, spec.seed);
    }
    let dataset = Dataset {
        context: Arc::new(context),
        triples,
    };
    dataset.validate(&kb)?;
    Ok(SynthOutput {
        kb,
        dataset,
        catalog,
        tool_predictions,
    })
}

/// Replaces each OCR word with probability `fraction` by a word from one
/// distractor reference bag of the same region, chosen per segment.
pub fn corrupt_bags(ctx: &VideoContext, catalog: &CueCatalog, fraction: f64, seed: u64) -> VideoContext {
    let mut out = ctx.clone();
    let mut keys: Vec<SegmentKey> = out.ocr.keys().cloned().collect();
    keys.sort();
    let mut rng = rng::stream(seed, &[0xbad]);
    for key in keys {
        let bags = out.ocr.get_mut(&key).expect("key present");
        for (region, slot) in [(Region::Panel, &mut bags.panel), (Region::Dialog, &mut bags.dialog)] {
            let Some(bag) = slot.as_ref() else { continue };
            let refs: Vec<&TokenBag> = catalog.region(region).values().collect();
            let distractor = refs.choose(&mut rng).expect("catalog non-empty");
            let pool: Vec<&str> = distractor.iter().map(|(w, _)| w).collect();
            let mut noisy = TokenBag::new();
            for (w, c) in bag.iter() {
                for _ in 0..c {
                    if rng.gen_bool(fraction) {
                        noisy.add(pool.choose(&mut rng).unwrap(), 1);
                    } else {
                        noisy.add(w, 1);
                    }
                }
            }
            *slot = Some(noisy);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub n_clusters: usize,
    pub tools_per_cluster: usize,
    pub n_videos: usize,
    pub sents_per_video: usize,
    pub n_triples: usize,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            n_clusters: 8,
            tools_per_cluster: 5,
            n_videos: 4,
            sents_per_video: 40,
            n_triples: 600,
            seed: 13,
        }
    }
}

pub struct ClusteredOutput {
    pub kb: KnowledgeBase,
    pub dataset: Dataset,
    /// Answers that only ever appear in `heldout` triples.
    pub heldout_answers: Vec<String>,
    pub seen: Vec<QATriple>,
    pub heldout: Vec<QATriple>,
}

/// A KB of panel-centred clusters. Narration names a panel; each question
/// asks for a tool of that panel. The last tool of every cluster is held
/// out: its triples never reach training, only its graph neighbours do.
pub fn synth_clustered(spec: &ClusterSpec) -> Result<ClusteredOutput> {
    if spec.n_clusters == 0 || spec.tools_per_cluster < 2 || spec.n_videos == 0 || spec.sents_per_video == 0 {
        return Err(Error::Config("clustered corpus needs clusters of at least two tools and some sentences".into()));
    }
    let mut rng = rng::stream(spec.seed, &[0xc1a5]);
    let mut names = Names { used: HashSet::new() };
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut clusters: Vec<(String, Vec<String>)> = Vec::new();
    for c in 0..spec.n_clusters {
        let panel = format!("panel{c:02}");
        let panel_name = names.fresh(&mut rng);
        entities.push(Entity {
            id: panel.clone(),
            name: panel_name.clone(),
            etype: EntityType::Panel,
            options: Vec::new(),
        });
        let mut tools = Vec::new();
        for k in 0..spec.tools_per_cluster {
            let id = format!("tool{c:02}_{k}");
            entities.push(Entity {
                id: id.clone(),
                name: names.fresh(&mut rng),
                etype: EntityType::Tool,
                options: Vec::new(),
            });
            relations.push(Relation {
                src: id.clone(),
                dst: panel.clone(),
                kind: RelationKind::BelongsTo,
            });
            tools.push(id);
        }
        clusters.push((panel_name, tools));
    }
    let kb = KnowledgeBase::new(entities, relations)?;

    let mut videos = BTreeMap::new();
    let mut topic: HashMap<SegmentKey, usize> = HashMap::new();
    for v in 0..spec.n_videos {
        let vid = format!("vid{v:02}");
        let sents = (0..spec.sents_per_video)
            .map(|i| {
                let n_filler = rng.gen_range(3..=6);
                let mut tokens: Vec<String> =
                    (0..n_filler).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
                let c = rng.gen_range(0..clusters.len());
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, clusters[c].0.clone());
                topic.insert((vid.clone(), i), c);
                Sentence {
                    video_id: vid.clone(),
                    index: i,
                    start_ms: i as u64 * 4000,
                    end_ms: i as u64 * 4000 + 3500,
                    tokens,
                }
            })
            .collect();
        videos.insert(vid, sents);
    }
    let mut keys: Vec<&SegmentKey> = topic.keys().collect();
    keys.sort();
    let question = words(&["which", "tool", "in", "the", "panel", "just", "mentioned", "should", "i", "use"]);
    let heldout_answers: Vec<String> = clusters.iter().map(|(_, t)| t.last().unwrap().clone()).collect();
    let (mut seen, mut heldout) = (Vec::new(), Vec::new());
    for k in 0..spec.n_triples {
        let key = *keys.choose(&mut rng).unwrap();
        let answer = clusters[topic[key]].1.choose(&mut rng).unwrap().clone();
        let triple = QATriple {
            id: format!("c{k:05}"),
            video_id: key.0.clone(),
            t: key.1,
            question_tokens: question.clone(),
            answer_id: answer,
        };
        if heldout_answers.contains(&triple.answer_id) {
            heldout.push(triple);
        } else {
            seen.push(triple);
        }
    }
    let dataset = Dataset {
        context: Arc::new(VideoContext {
            videos,
            ..Default::default()
        }),
        triples: seen.iter().chain(&heldout).cloned().collect(),
    };
    dataset.validate(&kb)?;
    Ok(ClusteredOutput {
        kb,
        dataset,
        heldout_answers,
        seen,
        heldout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::answer_pool;

    fn small() -> SynthSpec {
        SynthSpec {
            n_videos: 2,
            sents_per_video: 10,
            kb_size: 20,
            n_triples: 50,
            seed: 3,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noise_only_touches_ocr_and_tool_predictions() {
        let clean = synth_dataset(&SynthSpec {
            ocr_noise: 0.0,
            tool_error: 0.0,
            ..small()
        })
        .unwrap();
        let noisy = synth_dataset(&SynthSpec {
            ocr_noise: 0.6,
            tool_error: 0.5,
            ..small()
        })
        .unwrap();
        assert_eq!(clean.kb, noisy.kb);
        assert_eq!(clean.dataset.triples, noisy.dataset.triples);
        assert_eq!(clean.dataset.context.videos, noisy.dataset.context.videos);
        assert_eq!(clean.dataset.context.cues, noisy.dataset.context.cues);
        assert_ne!(clean.dataset.context.ocr, noisy.dataset.context.ocr);
        assert_eq!(clean.tool_predictions.len(), noisy.tool_predictions.len());
        let wrong = noisy
            .tool_predictions
            .iter()
            .filter(|(k, t)| clean.tool_predictions[*k] != **t)
            .count();
        assert!(wrong > 0 && wrong < noisy.tool_predictions.len());
        for (k, t) in &clean.tool_predictions {
            assert_eq!(clean.dataset.context.cues[k].tool.as_ref(), Some(t));
        }
    }

    #[test]
    fn noise_fractions_are_validated() {
        assert!(synth_dataset(&SynthSpec { ocr_noise: 1.5, ..small() }).is_err());
        assert!(synth_dataset(&SynthSpec { tool_error: -0.1, ..small() }).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small()).unwrap();
        assert_eq!(a.kb, b.kb);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.catalog, b.catalog);
    }

    #[test]
    fn sizes_and_validation() {
        let out = synth_dataset(&small()).unwrap();
        assert_eq!(out.dataset.triples.len(), 50);
        assert_eq!(answer_pool(&out.kb).len(), 20);
        out.dataset.validate(&out.kb).unwrap();
    }

    #[test]
    fn fully_cue_determined() {
        let spec = SynthSpec {
            cue_determined_fraction: 1.0,
            ..small()
        };
        let out = synth_dataset(&spec).unwrap();
        for t in &out.dataset.triples {
            let cue = out.dataset.context.cue(&t.video_id, t.t).unwrap();
            assert!(Stream::ALL.iter().any(|s| cue.get(*s) == Some(t.answer_id.as_str())));
        }
    }

    #[test]
    fn clustered_holdout_is_disjoint() {
        let out = synth_clustered(&ClusterSpec::default()).unwrap();
        assert_eq!(answer_pool(&out.kb).len(), 8 * 6);
        assert!(!out.heldout.is_empty());
        assert!(out.seen.iter().all(|t| !out.heldout_answers.contains(&t.answer_id)));
        assert!(out.heldout.iter().all(|t| out.heldout_answers.contains(&t.answer_id)));
        assert_eq!(out.seen.len() + out.heldout.len(), 600);
    }

    #[test]
    fn rejects_tiny_kb() {
        let spec = SynthSpec { kb_size: 3, ..small() };
        assert!(synth_dataset(&spec).is_err());
    }
}
