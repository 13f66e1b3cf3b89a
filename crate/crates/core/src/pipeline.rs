//! Command implementations shared by the binary and the tests. Every
//! command reads a `RunConfig`, writes its artifacts into `paths.out` and
//! leaves a `<command>.manifest.json` next to them.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{required, RunConfig};
use crate::corpus::{
    build_vocab, load_context, load_cues, load_triples, save_context, save_cues, save_triples, split_triples,
    synth_dataset, write_jsonl, CueAnnotation, Dataset, SegmentKey, Vocabulary,
};
use crate::cues::{cue_accuracy, load_tool_predictions, predict_cue_streams, CueCatalog, ToolPrediction, WordVectors};
use crate::encoders::AnswerInit;
use crate::error::{Error, Result};
use crate::evaluator::{
    ablation, dump_attention, evaluate, format_table, save_attention, stratify_by_cue_error,
    AblationRow, CueSource, EvalReport, Example,
};
use crate::fusion::{random_input, ModelConfig, QAModel};
use crate::graphembed::{deepwalk, load_embeddings, save_embeddings, NodeEmbeddings, WalkConfig};
use crate::kb::{answer_pool, load_kb, save_kb, to_graph, AnswerPool, KnowledgeBase};
use crate::trainer::{fit, gradient_check, FitData, TrainHistory};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_EPSILON: f64 = 1e-4;

/// Provenance of one command run. Contains nothing time-dependent, so
/// identical inputs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 of every input file, keyed by config path name.
    pub data_hashes: BTreeMap<String, String>,
    /// SHA-256 of every artifact written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<TrainHistory>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Collects hashes and writes the manifest for one command.
struct Run<'a> {
    command: &'static str,
    cfg: &'a RunConfig,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    history: Option<TrainHistory>,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            command,
            cfg,
            out,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            history: None,
        })
    }

    /// Resolves a required input path and records its hash.
    fn input(&mut self, name: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
        let p = required(path, name)?;
        if !p.is_file() {
            return Err(Error::Config(format!("paths.{name}: {} is not a file", p.display())));
        }
        self.inputs.insert(name.to_string(), hash_file(&p)?);
        Ok(p)
    }

    fn optional_input(&mut self, name: &str, path: &Option<PathBuf>) -> Result<Option<PathBuf>> {
        match path {
            Some(_) => self.input(name, path).map(Some),
            None => Ok(None),
        }
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), hash_file(&self.out.join(name))?);
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.cfg.clone(),
            data_hashes: self.inputs,
            outputs,
            history: self.history,
        };
        write_json(&self.out.join(format!("{}.manifest.json", self.command)), &manifest)?;
        Ok(manifest)
    }
}

fn load_dataset_from(run: &mut Run<'_>, kb: &KnowledgeBase) -> Result<Dataset> {
    let paths = &run.cfg.paths;
    let transcripts = run.input("transcripts", &paths.transcripts)?;
    let cues = run.input("cues", &paths.cues)?;
    let ocr = run.optional_input("ocr", &paths.ocr)?;
    let qa = run.input("qa", &paths.qa)?;
    let ctx = load_context(kb, &transcripts, &cues, ocr.as_deref())?;
    load_triples(kb, std::sync::Arc::new(ctx), &qa)
}

struct Splits {
    train: Dataset,
    dev: Dataset,
    test: Dataset,
}

fn split(cfg: &RunConfig, ds: &Dataset) -> Splits {
    let (tr, dv, te) = split_triples(&ds.triples, cfg.data.train_fraction, cfg.data.dev_fraction, cfg.seed);
    Splits {
        train: ds.with_triples(tr),
        dev: ds.with_triples(dv),
        test: ds.with_triples(te),
    }
}

fn word_vectors(run: &mut Run<'_>) -> Result<Option<WordVectors>> {
    let p = run.optional_input("word_vectors", &run.cfg.paths.word_vectors.clone())?;
    p.map(WordVectors::load).transpose()
}

/// Graph embeddings for answer initialisation: the configured file, or a
/// fresh DeepWalk run at the answer dimension.
fn graph_embeddings(run: &mut Run<'_>, kb: &KnowledgeBase, needed: bool) -> Result<Option<NodeEmbeddings>> {
    if !needed {
        return Ok(None);
    }
    if let Some(p) = run.optional_input("graph_embeddings", &run.cfg.paths.graph_embeddings.clone())? {
        return load_embeddings(p).map(Some);
    }
    let walk = WalkConfig {
        dim: run.cfg.model.answer_dim,
        ..run.cfg.walk.clone()
    };
    log::info!("no graph embeddings given; running DeepWalk at dim {}", walk.dim);
    deepwalk(&to_graph(kb), &walk).map(Some)
}

fn checkpoint_path(run: &Run<'_>) -> PathBuf {
    run.cfg
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| run.out.join("model.json"))
}

fn load_model(run: &mut Run<'_>, kb: &KnowledgeBase) -> Result<QAModel> {
    let path = checkpoint_path(run);
    run.input("checkpoint", &Some(path.clone()))?;
    load_checkpoint(&path, Some(kb))
}

fn load_predicted(run: &mut Run<'_>, ds: &Dataset) -> Result<HashMap<SegmentKey, CueAnnotation>> {
    let path = run
        .cfg
        .paths
        .predicted_cues
        .clone()
        .unwrap_or_else(|| run.out.join("predicted_cues.jsonl"));
    let p = run.input("predicted_cues", &Some(path))?;
    load_cues(&ds.context, &p)
}

pub fn build_graph(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("build-graph", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let graph = to_graph(&kb);
    #[derive(Serialize)]
    struct GraphFile<'g> {
        nodes: &'g [String],
        edges: Vec<(&'g str, &'g str)>,
    }
    let pool = answer_pool(&kb);
    let file = GraphFile {
        nodes: pool.ids(),
        edges: graph
            .edges()
            .into_iter()
            .map(|(a, b)| (pool.ids()[a].as_str(), pool.ids()[b].as_str()))
            .collect(),
    };
    write_json(&run.output("graph.json"), &file)?;
    log::info!("graph: {} nodes, {} edges", graph.node_count(), graph.edge_count());
    run.finish()
}

pub fn embed_graph(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("embed-graph", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let emb = deepwalk(&to_graph(&kb), &cfg.walk)?;
    save_embeddings(&emb, run.output("graph_embeddings.txt"))?;
    run.finish()
}

pub fn match_cues(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("match-cues", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let transcripts = run.input("transcripts", &cfg.paths.transcripts)?;
    let cues = run.input("cues", &cfg.paths.cues)?;
    let ocr = run.input("ocr", &cfg.paths.ocr)?;
    let catalog = CueCatalog::load(run.input("catalog", &cfg.paths.catalog)?)?;
    catalog.validate(&kb)?;
    let tools = load_tool_predictions(run.input("tool_predictions", &cfg.paths.tool_predictions)?)?;
    // Without embeddings every word is an OOV unit vector: exact matches only.
    let wv = word_vectors(&mut run)?.unwrap_or_else(|| WordVectors::new(50));
    let ctx = load_context(&kb, &transcripts, &cues, Some(&ocr))?;
    let predicted = predict_cue_streams(&ctx, &tools, &catalog, &wv, &kb)?;
    save_cues(&predicted, &run.output("predicted_cues.jsonl"))?;
    write_json(&run.output("cue_accuracy.json"), &cue_accuracy(&predicted, &ctx.cues))?;
    run.finish()
}

/// Writes a synthetic corpus plus a `config.json` that points at it with
/// desk-scale model dimensions.
pub fn synth_data(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("synth-data", cfg)?;
    let out = synth_dataset(&cfg.synth)?;
    save_kb(&out.kb, run.output("kb.json"))?;
    save_context(&out.dataset.context, &run.out)?;
    run.outputs.extend(["transcripts.jsonl".to_string(), "cues.jsonl".to_string()]);
    if !out.dataset.context.ocr.is_empty() {
        run.outputs.push("ocr.jsonl".to_string());
    }
    save_triples(&out.dataset.triples, &run.output("qa.jsonl"))?;
    out.catalog.save(run.output("catalog.jsonl"))?;
    let mut keys: Vec<&SegmentKey> = out.tool_predictions.keys().collect();
    keys.sort();
    write_jsonl(
        &run.output("tool_predictions.jsonl"),
        keys.into_iter().map(|k| ToolPrediction {
            video_id: k.0.clone(),
            index: k.1,
            tool: Some(out.tool_predictions[k].clone()),
        }),
    )?;
    // Relative paths resolve against the config file's directory, so the
    // generated tree can be moved as a unit.
    let p = |name: &str| Value::String(name.to_string());
    let mut desk = serde_json::Map::new();
    for (k, v) in [
        ("paths.kb", p("kb.json")),
        ("paths.transcripts", p("transcripts.jsonl")),
        ("paths.cues", p("cues.jsonl")),
        ("paths.ocr", p("ocr.jsonl")),
        ("paths.qa", p("qa.jsonl")),
        ("paths.catalog", p("catalog.jsonl")),
        ("paths.tool_predictions", p("tool_predictions.jsonl")),
        ("paths.out", p(".")),
        ("model.word_dim", 32.into()),
        ("model.feature_maps", 16.into()),
        ("model.gru_hidden", 32.into()),
        ("model.attn_hidden", 32.into()),
        ("model.answer_dim", 32.into()),
        ("model.w", 2.into()),
        ("walk.dim", 32.into()),
        ("train.batch_size", 32.into()),
        ("seed", cfg.seed.into()),
    ] {
        desk.insert(k.to_string(), v);
    }
    write_json(&run.output("config.json"), &desk)?;
    run.finish()
}

pub fn train(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("train", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let ds = load_dataset_from(&mut run, &kb)?;
    let s = split(cfg, &ds);
    let vocab = build_vocab(&s.train, cfg.data.min_count);
    let wv = word_vectors(&mut run)?;
    let graph = graph_embeddings(&mut run, &kb, cfg.model.answer_init == AnswerInit::Graph)?;
    let data = FitData {
        kb: &kb,
        train: &s.train,
        dev: &s.dev,
        vocab: &vocab,
        graph: graph.as_ref(),
        word_vectors: wv.as_ref(),
    };
    let (model, history) = fit(data, &cfg.model, &cfg.train)?;
    log::info!(
        "trained {} parameters; selected epoch {:?}",
        model.parameter_count(),
        history.selected_epoch
    );
    save_checkpoint(&model, &run.output("model.json"))?;
    write_json(&run.output("history.json"), &history)?;
    // Wall time stays out of the manifest and its output hashes.
    write_json(&run.out.join("timing.json"), &history.wall_ms)?;
    run.history = Some(history);
    run.finish()
}

fn write_report(run: &mut Run<'_>, stem: &str, report: &EvalReport) -> Result<()> {
    write_json(&run.output(&format!("{stem}.json")), report)?;
    let table = format_table(&[(stem.to_string(), report.metrics)]);
    write_text(&run.output(&format!("{stem}.txt")), &table)?;
    print!("{table}");
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("evaluate", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let ds = load_dataset_from(&mut run, &kb)?;
    let model = load_model(&mut run, &kb)?;
    let test = split(cfg, &ds).test;
    let predicted = match cfg.cue_source {
        CueSource::Gold => None,
        CueSource::Predicted => Some(load_predicted(&mut run, &ds)?),
    };
    let report = evaluate(&model, &kb, &test, cfg.cue_source, predicted.as_ref())?;
    write_report(&mut run, "report", &report)?;
    run.finish()
}

pub fn ablate(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("ablate", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let ds = load_dataset_from(&mut run, &kb)?;
    let s = split(cfg, &ds);
    let vocab = build_vocab(&s.train, cfg.data.min_count);
    let wv = word_vectors(&mut run)?;
    let graph = graph_embeddings(&mut run, &kb, true)?;
    let data = FitData {
        kb: &kb,
        train: &s.train,
        dev: &s.dev,
        vocab: &vocab,
        graph: graph.as_ref(),
        word_vectors: wv.as_ref(),
    };
    let results = ablation(&AblationRow::standard(), data, &s.test, &cfg.model, &cfg.train)?;
    write_json(&run.output("ablation.json"), &results)?;
    let rows: Vec<_> = results.iter().map(|r| (r.name.clone(), r.report.metrics)).collect();
    let table = format_table(&rows);
    write_text(&run.output("ablation.txt"), &table)?;
    print!("{table}");
    run.finish()
}

pub fn stratify(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("stratify", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let ds = load_dataset_from(&mut run, &kb)?;
    let model = load_model(&mut run, &kb)?;
    let predicted = load_predicted(&mut run, &ds)?;
    let test = split(cfg, &ds).test;
    let report = evaluate(&model, &kb, &test, CueSource::Predicted, Some(&predicted))?;
    let ranks: HashMap<String, usize> = report.triple_ids.iter().cloned().zip(report.ranks.iter().copied()).collect();
    let strat = stratify_by_cue_error(&test, &ranks, &predicted, model.config.w)?;
    write_json(&run.output("stratify.json"), &strat)?;
    let mut table = format_table(&[
        ("wrong".into(), strat.wrong),
        ("partial".into(), strat.partial),
        ("correct".into(), strat.correct),
    ]);
    table.push_str(&format!("cue-free triples: {}\n", strat.cue_free));
    write_text(&run.output("stratify.txt"), &table)?;
    print!("{table}");
    run.finish()
}

pub fn inspect_attention(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("inspect-attention", cfg)?;
    let kb = load_kb(run.input("kb", &cfg.paths.kb)?)?;
    let ds = load_dataset_from(&mut run, &kb)?;
    let model = load_model(&mut run, &kb)?;
    let test = split(cfg, &ds).test;
    let records = dump_attention(&model, &test)?;
    save_attention(&records, &run.output("attention.jsonl"))?;
    run.finish()
}

/// Miniature model of the configured variant with random inputs.
pub fn grad_check_model(cfg: &RunConfig) -> Result<(QAModel, Vec<Example>)> {
    let vocab = Vocabulary::from_tokens((0..12).map(|i| format!("w{i}")).collect(), 1);
    let pool = AnswerPool::from_ids((0..4).map(|i| format!("a{i}")).collect());
    let mcfg = ModelConfig {
        seed: cfg.seed,
        ..ModelConfig::miniature(cfg.model.variant)
    };
    let mut model = QAModel::new(mcfg, vocab, pool, None, None)?;
    model.jitter(0.05, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let examples = (0..3)
        .map(|i| Example {
            id: format!("g{i}"),
            input: random_input(&model, &mut rng),
            gold: rng.gen_range(0..4),
        })
        .collect();
    Ok((model, examples))
}

pub fn grad_check(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::start("grad-check", cfg)?;
    let (model, examples) = grad_check_model(cfg)?;
    let report = gradient_check(&model, &examples, GRAD_CHECK_EPSILON, None, cfg.seed)?;
    write_json(&run.output("gradcheck.json"), &report)?;
    println!(
        "{}: max relative error {:.3e} over {} coordinates",
        cfg.model.variant.as_str(),
        report.max_rel_error,
        report.checked
    );
    if report.max_rel_error > GRAD_CHECK_TOLERANCE {
        return Err(Error::GradientCheck(format!(
            "max relative error {:.3e} at {:?}",
            report.max_rel_error, report.worst
        )));
    }
    run.finish()
}
