//! Model checkpoints: config, vocabulary, answer pool and every parameter
//! tensor in one JSON file. Floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::encoders::AnswerInit;
use crate::error::{Error, Result};
use crate::fusion::{ModelConfig, QAModel};
use crate::kb::{answer_pool, AnswerPool, KnowledgeBase};
use crate::nn::Param;

const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: u32,
    config: ModelConfig,
    vocab_hash: String,
    pool_hash: String,
    vocab: Vocabulary,
    pool: Vec<String>,
    params: Vec<Param>,
}

pub fn to_json_string(model: &QAModel) -> String {
    let file = CheckpointFile {
        format: FORMAT,
        config: model.config.clone(),
        vocab_hash: model.vocab.fingerprint(),
        pool_hash: model.pool.fingerprint(),
        vocab: model.vocab.clone(),
        pool: model.pool.ids().to_vec(),
        params: model.params.iter().cloned().collect(),
    };
    serde_json::to_string(&file).expect("checkpoint serialises")
}

/// Rebuilds a model. When `kb` is given its answer pool must be the one the
/// model was trained on.
pub fn from_json_str(text: &str, kb: Option<&KnowledgeBase>) -> Result<QAModel> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))?;
    if file.format != FORMAT {
        return Err(Error::CheckpointMismatch(format!("unsupported format {}", file.format)));
    }
    if file.vocab.fingerprint() != file.vocab_hash {
        return Err(Error::CheckpointMismatch("vocabulary hash does not match stored vocabulary".into()));
    }
    let pool = AnswerPool::from_ids(file.pool);
    if pool.fingerprint() != file.pool_hash {
        return Err(Error::CheckpointMismatch("pool hash does not match stored pool".into()));
    }
    if let Some(kb) = kb {
        if answer_pool(kb).fingerprint() != file.pool_hash {
            return Err(Error::CheckpointMismatch(
                "knowledge base answer pool differs from the checkpoint's".into(),
            ));
        }
    }
    // The skeleton only provides layout; every value is overwritten below.
    let skeleton_cfg = ModelConfig {
        answer_init: AnswerInit::Random,
        ..file.config.clone()
    };
    let mut model = QAModel::new(skeleton_cfg, file.vocab, pool, None, None)?;
    model.config = file.config;
    if model.params.len() != file.params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} parameter tensors, found {}",
            model.params.len(),
            file.params.len()
        )));
    }
    for (dst, src) in model.params.iter_mut().zip(file.params) {
        if dst.name != src.name || dst.rows != src.rows || dst.cols != src.cols || src.value.len() != src.rows * src.cols
        {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {} ({}x{}) does not fit {} ({}x{})",
                src.name, src.rows, src.cols, dst.name, dst.rows, dst.cols
            )));
        }
        *dst = src;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &QAModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_json_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, kb: Option<&KnowledgeBase>) -> Result<QAModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text, kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Variant;

    fn model() -> QAModel {
        let vocab = Vocabulary::from_tokens((0..9).map(|i| format!("t{i}")).collect(), 1);
        let pool = AnswerPool::from_ids((0..4).map(|i| format!("a{i}")).collect());
        let mut m = QAModel::new(ModelConfig::miniature(Variant::Dual), vocab, pool, None, None).unwrap();
        m.jitter(0.1, 9);
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = from_json_str(&to_json_string(&m), None).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tampered_pool_is_refused() {
        let text = to_json_string(&model()).replace("\"a3\"", "\"zz\"");
        assert!(matches!(from_json_str(&text, None), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn tampered_vocab_is_refused() {
        let text = to_json_string(&model()).replace("\"t4\"", "\"t44\"");
        assert!(matches!(from_json_str(&text, None), Err(Error::CheckpointMismatch(_))));
    }
}
