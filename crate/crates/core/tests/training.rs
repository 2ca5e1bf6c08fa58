mod common;

use common::{planted_samples, tiny_bilstm, tiny_transformer};
use sqa_core::model::{decode_checkpoint, encode_checkpoint, load_checkpoint};
use sqa_core::training::{evaluate, loss_and_rmse, train, TrainRunConfig};

fn run(dir: &std::path::Path) -> TrainRunConfig {
    TrainRunConfig {
        batch_size: 8,
        epochs: 12,
        seed: 4,
        init_seed: 9,
        checkpoint_path: Some(dir.join("best.sqac")),
        ..Default::default()
    }
}

#[test]
fn same_seeds_give_identical_runs() {
    let samples = planted_samples(30, 6, 2);
    let (tr, va) = samples.split_at(24);
    let dir = tempfile::tempdir().unwrap();
    let a = train(&tiny_bilstm(6, 1), &run(dir.path()), tr, va).unwrap();
    let b = train(&tiny_bilstm(6, 1), &run(dir.path()), tr, va).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(encode_checkpoint(&a.model), encode_checkpoint(&b.model));

    let mut other = run(dir.path());
    other.seed = 5;
    let c = train(&tiny_bilstm(6, 1), &other, tr, va).unwrap();
    assert_ne!(a.report.epochs, c.report.epochs);
}

#[test]
fn saved_checkpoint_reproduces_selected_validation_loss() {
    let samples = planted_samples(30, 6, 3);
    let (tr, va) = samples.split_at(24);
    let dir = tempfile::tempdir().unwrap();
    for cfg in [tiny_bilstm(6, 1), tiny_transformer(6, 1)] {
        let out = train(&cfg, &run(dir.path()), tr, va).unwrap();
        let loaded = load_checkpoint(dir.path().join("best.sqac")).unwrap();
        let (loss, rmse) = loss_and_rmse(&loaded, va, 8).unwrap();
        assert!(
            (loss - out.report.best_loss).abs() < 1e-12,
            "{loss} vs {}",
            out.report.best_loss
        );
        assert!((rmse - out.report.best_val_rmse.unwrap()).abs() < 1e-12);
        assert_eq!(encode_checkpoint(&loaded), encode_checkpoint(&out.model));
        let again = decode_checkpoint(&encode_checkpoint(&loaded)).unwrap();
        assert_eq!(
            again.predict_one(&va[0].streams).unwrap(),
            loaded.predict_one(&va[0].streams).unwrap()
        );
    }
}

#[test]
fn evaluation_groups_by_corpus() {
    let samples = planted_samples(12, 4, 1);
    let dir = tempfile::tempdir().unwrap();
    let out = train(
        &tiny_bilstm(4, 1),
        &TrainRunConfig {
            epochs: 2,
            ..run(dir.path())
        },
        &samples,
        &[],
    )
    .unwrap();
    let report = evaluate(&out.model, &samples, 5).unwrap();
    assert_eq!(report.predictions.len(), 12);
    let stats = report.per_corpus.values().next().unwrap();
    assert_eq!(stats.n, 12);
    assert!((stats.rmse - stats.mse.sqrt()).abs() < 1e-12);
}
