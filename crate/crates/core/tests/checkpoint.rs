use screenqa::checkpoint::{load_checkpoint, save_checkpoint};
use screenqa::corpus::{build_vocab, split_triples, synth_dataset, SynthSpec};
use screenqa::evaluator::{evaluate, CueSource};
use screenqa::fusion::{ModelConfig, Variant};
use screenqa::trainer::{fit, FitData, TrainConfig};
use screenqa::Error;

#[test]
fn reloaded_checkpoint_reproduces_dev_metrics_bitwise() {
    let out = synth_dataset(&SynthSpec {
        n_videos: 2,
        sents_per_video: 15,
        kb_size: 20,
        n_triples: 60,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let (tr, dv, _) = split_triples(&out.dataset.triples, 0.7, 0.3, 2);
    let train = out.dataset.with_triples(tr);
    let dev = out.dataset.with_triples(dv);
    let vocab = build_vocab(&train, 1);
    let data = FitData {
        kb: &out.kb,
        train: &train,
        dev: &dev,
        vocab: &vocab,
        graph: None,
        word_vectors: None,
    };
    let mcfg = ModelConfig {
        variant: Variant::Dual,
        w: 2,
        word_dim: 12,
        feature_maps: 4,
        gru_hidden: 10,
        attn_hidden: 10,
        answer_dim: 12,
        seed: 4,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        max_epochs: 3,
        batch_size: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let (model, history) = fit(data, &mcfg, &tcfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path, Some(&out.kb)).unwrap();
    assert_eq!(loaded, model);

    let a = evaluate(&model, &out.kb, &dev, CueSource::Gold, None).unwrap();
    let b = evaluate(&loaded, &out.kb, &dev, CueSource::Gold, None).unwrap();
    assert_eq!(a.ranks, b.ranks);
    assert_eq!(a.fingerprint, b.fingerprint);
    let (ma, mb) = (a.metrics.unwrap(), b.metrics.unwrap());
    for (x, y) in [(ma.mrr, mb.mrr), (ma.r1, mb.r1), (ma.r10, mb.r10), (ma.avg_rank, mb.avg_rank)] {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    // The selected epoch's dev metrics are what the reloaded model scores.
    let selected = history.selected_epoch.unwrap();
    let recorded = history.epochs.iter().find(|e| e.epoch == selected).and_then(|e| e.dev).unwrap();
    assert_eq!(recorded.mrr.to_bits(), mb.mrr.to_bits());

    let other = synth_dataset(&SynthSpec {
        kb_size: 24,
        ..SynthSpec::default()
    })
    .unwrap();
    assert!(matches!(
        load_checkpoint(&path, Some(&other.kb)),
        Err(Error::CheckpointMismatch(_))
    ));
}
