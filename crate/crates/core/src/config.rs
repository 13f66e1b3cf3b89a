//! Run configuration. Files are JSON objects with flat dotted keys such as
//! `"model.w": 3` or `"paths.kb": "kb.json"`, merged over the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::SynthSpec;
use crate::error::{Error, Result};
use crate::evaluator::CueSource;
use crate::fusion::ModelConfig;
use crate::graphembed::WalkConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub kb: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub cues: Option<PathBuf>,
    pub ocr: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub tool_predictions: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub graph_embeddings: Option<PathBuf>,
    pub predicted_cues: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.kb,
            &mut self.transcripts,
            &mut self.qa,
            &mut self.cues,
            &mut self.ocr,
            &mut self.catalog,
            &mut self.tool_predictions,
            &mut self.word_vectors,
            &mut self.graph_embeddings,
            &mut self.predicted_cues,
            &mut self.checkpoint,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub min_count: usize,
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_count: 1,
            train_fraction: 0.8,
            dev_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub cue_source: CueSource,
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub walk: WalkConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    /// Merges dotted keys over the defaults. A top-level `seed` fills every
    /// component seed not set explicitly.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let flat: Map<String, Value> = serde_json::from_str(text).map_err(|e| Error::parse("config", e))?;
        let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
        for (key, value) in &flat {
            set_dotted(&mut tree, key, value.clone())?;
        }
        if let Some(seed) = flat.get("seed") {
            for section in ["model", "train", "walk", "synth"] {
                if !flat.contains_key(&format!("{section}.seed")) {
                    set_dotted(&mut tree, &format!("{section}.seed"), seed.clone())?;
                }
            }
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::parse("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.walk.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.walk.validate()?;
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.dev_fraction >= 0.0 && d.train_fraction + d.dev_fraction <= 1.0) {
            return Err(Error::Config("data fractions must be positive and sum to at most 1".into()));
        }
        Ok(())
    }
}

/// The value of `paths.<name>`, or a validation error naming the key.
pub fn required(path: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("paths.{name} is required for this command")))
}

fn set_dotted(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key `{key}`"));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(unknown)?;
        if !obj.contains_key(*part) {
            return Err(unknown());
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    Err(unknown())
}
