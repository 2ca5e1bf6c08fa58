//! Batching with padding masks, the training loop and evaluation.
//!
//! The loss is the MSE between sigmoid outputs and normalized labels.
//! Reported RMSE values are on the 1–5 scale. Parameters are kept at f32
//! precision after every update, so a saved checkpoint reproduces the
//! selected model exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{normalize_mos, Corpus, SampleRecord, ViewName, MFCC_LAYER};
use crate::error::{Error, Result};
use crate::features::{extract_mfcc, read_embedding, read_wav, FeatureSequence};
use crate::model::{save_checkpoint, BatchInput, Predictor, PredictorConfig};
use crate::nn::{Adam, AdamConfig, Graph, Mode, ParamStore};
use crate::rng::{derive_seed, Xoshiro256};

/// One utterance ready for the model: its feature stream(s) and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub corpus: Corpus,
    pub streams: Vec<FeatureSequence>,
    pub mos: f64,
}

/// Features for `layer` of a record: an SQAF file from `feature_paths`, or
/// for [`MFCC_LAYER`] without a stored file, MFCCs computed from the audio.
pub fn load_feature(record: &SampleRecord, layer: u32) -> Result<FeatureSequence> {
    if let Some(path) = record.feature_paths.get(&layer) {
        return read_embedding(path);
    }
    if layer == MFCC_LAYER {
        if let Some(audio) = &record.audio_path {
            return extract_mfcc(&read_wav(audio)?);
        }
    }
    Err(Error::Validation(format!(
        "record '{}' has no features for layer {}",
        record.id,
        layer_label(layer)
    )))
}

pub fn layer_label(layer: u32) -> String {
    if layer == MFCC_LAYER {
        "mfcc".into()
    } else {
        layer.to_string()
    }
}

/// Load the streams named by `layers` for every record, in parallel,
/// preserving record order.
pub fn load_samples(records: &[&SampleRecord], layers: &[u32]) -> Result<Vec<Sample>> {
    records
        .par_iter()
        .map(|r| {
            let streams = layers.iter().map(|&l| load_feature(r, l)).collect::<Result<Vec<_>>>()?;
            Ok(Sample {
                id: r.id.clone(),
                corpus: r.corpus,
                streams,
                mos: r.mos,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRunConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Data-order seed (per-epoch shuffles).
    pub seed: u64,
    /// Parameter initialization seed.
    pub init_seed: u64,
    pub eval_every: usize,
    /// Global gradient-norm clip; off unless set.
    pub grad_clip: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 60,
            epochs: 30,
            seed: 0,
            init_seed: 0,
            eval_every: 1,
            grad_clip: None,
            checkpoint_path: None,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, epochs and eval_every must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Positions of the batch members in the sample list.
    pub indices: Vec<usize>,
    pub input: BatchInput,
    /// Normalized labels.
    pub targets: Vec<f64>,
}

/// Shuffle with a stream derived from `(seed, epoch)` and cut into batches
/// of `batch_size`; the last batch keeps the remainder.
pub fn make_batches(samples: &[Sample], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let order = Xoshiro256::seed_from_u64(derive_seed(&[seed, epoch as u64])).permutation(samples.len());
    order.chunks(batch_size).map(|idx| build_batch(samples, idx)).collect()
}

pub fn build_batch(samples: &[Sample], indices: &[usize]) -> Result<Batch> {
    let streams: Vec<&[FeatureSequence]> = indices.iter().map(|&i| samples[i].streams.as_slice()).collect();
    let input = BatchInput::from_samples(&streams)?;
    let targets = indices
        .iter()
        .map(|&i| normalize_mos(samples[i].mos))
        .collect::<Result<_>>()?;
    Ok(Batch {
        indices: indices.to_vec(),
        input,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Loss the selection was made on (validation loss, or training loss
    /// when there is no validation set).
    pub best_loss: f64,
    pub best_val_rmse: Option<f64>,
    pub selected_on: &'static str,
    pub best_checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    /// Line-delimited log: one record per epoch, then a summary record.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e).expect("epoch log serializes");
            out.push(b'\n');
        }
        let summary = serde_json::json!({
            "summary": true,
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
            "best_val_rmse": self.best_val_rmse,
            "selected_on": self.selected_on,
            "best_checkpoint_path": self.best_checkpoint_path,
        });
        serde_json::to_writer(&mut out, &summary).expect("summary serializes");
        out.push(b'\n');
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// The selected (lowest-loss) model.
    pub model: Predictor,
}

fn clip_gradients(grads: &mut ParamStore, max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// One optimization step on `batch`; returns the batch loss.
pub fn train_step(model: &mut Predictor, adam: &mut Adam, batch: &Batch, grad_clip: Option<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let out = model.forward_graph(&mut g, &p, &batch.input, Mode::Train)?;
    let n = batch.targets.len();
    let targets = g.constant(batch.targets.clone(), n, 1);
    let diff = g.sub(out.normalized, targets)?;
    let sq = g.mul(diff, diff)?;
    let loss = g.mean(sq);
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    let grads = g.backward(loss)?;
    let mut grads = p.gradients(&grads, &g, &model.params);
    if let Some(c) = grad_clip {
        clip_gradients(&mut grads, c);
    }
    adam.update(&mut model.params, &grads)?;
    model.params.round_to_f32();
    model.update_running_stats(&out.bn_stats)?;
    model.buffers.round_to_f32();
    Ok(value)
}

/// Eval-mode predictions for every sample, in input order.
pub fn predict_samples(model: &Predictor, samples: &[Sample], batch_size: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = build_batch(samples, chunk)?;
        out.extend(model.predict_batch(&batch.input)?.into_iter().map(|p| p.normalized));
    }
    Ok(out)
}

/// Normalized-space MSE and 1–5-scale RMSE of `model` on `samples`.
pub fn loss_and_rmse(model: &Predictor, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    let preds = predict_samples(model, samples, batch_size)?;
    let mut sse = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        sse += (p - normalize_mos(s.mos)?).powi(2);
    }
    let mse = sse / samples.len() as f64;
    Ok((mse, 4.0 * mse.sqrt()))
}

/// Train for the configured number of epochs and keep the parameters of the
/// epoch with the lowest validation loss. Without validation samples the
/// training loss is used instead.
pub fn train(
    config: &PredictorConfig,
    run: &TrainRunConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<TrainOutcome> {
    run.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    let mut model = Predictor::new(config.clone(), run.init_seed)?;
    model.params.round_to_f32();
    let mut adam = Adam::new(
        AdamConfig {
            lr: run.lr,
            ..AdamConfig::default()
        },
        &model.params,
    )?;

    let mut epochs = Vec::with_capacity(run.epochs);
    let mut best: Option<(usize, f64, Option<f64>, Predictor)> = None;
    for epoch in 0..run.epochs {
        let batches = make_batches(train_set, run.batch_size, run.seed, epoch)?;
        let mut weighted = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let loss = train_step(&mut model, &mut adam, batch, run.grad_clip).map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!("{context} at epoch {}, batch {}", epoch + 1, bi + 1),
                },
                other => other,
            })?;
            weighted += loss * batch.targets.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        let evaluate_now = (epoch + 1) % run.eval_every == 0 || epoch + 1 == run.epochs;
        let (val_loss, val_rmse) = if evaluate_now && !val_set.is_empty() {
            let (l, r) = loss_and_rmse(&model, val_set, run.batch_size)?;
            (Some(l), Some(r))
        } else {
            (None, None)
        };
        epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_rmse,
        });
        let candidate = if val_set.is_empty() { Some(train_loss) } else { val_loss };
        if let Some(c) = candidate {
            if best.as_ref().is_none_or(|(_, b, _, _)| c < *b) {
                best = Some((epoch + 1, c, val_rmse, model.clone()));
            }
        }
    }
    let (best_epoch, best_loss, best_val_rmse, best_model) = best.expect("at least one epoch evaluated");
    if let Some(path) = &run.checkpoint_path {
        save_checkpoint(&best_model, path)?;
    }
    Ok(TrainOutcome {
        report: TrainReport {
            epochs,
            best_epoch,
            best_loss,
            best_val_rmse,
            selected_on: if val_set.is_empty() { "train" } else { "validation" },
            best_checkpoint_path: run.checkpoint_path.clone(),
        },
        model: best_model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: usize,
    pub sse: f64,
    pub mse: f64,
    pub rmse: f64,
}

impl GroupStats {
    fn from_errors(errors: impl Iterator<Item = f64>) -> Option<Self> {
        let (n, sse) = errors.fold((0usize, 0.0), |(n, s), e| (n + 1, s + e * e));
        (n > 0).then(|| GroupStats {
            n,
            sse,
            mse: sse / n as f64,
            rmse: (sse / n as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    pub corpus: Corpus,
    pub mos_pred: f64,
    pub mos_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_corpus: BTreeMap<Corpus, GroupStats>,
    pub aggregates: Vec<(ViewName, GroupStats)>,
    /// Corpora and aggregates with no samples.
    pub omitted: Vec<String>,
    pub predictions: Vec<PredictionRecord>,
}

/// RMSE on the 1–5 scale per corpus and for the subset / unseen / full
/// aggregates, computed from precomputed predictions.
pub fn evaluate_predictions(predictions: Vec<PredictionRecord>) -> EvalReport {
    let mut per_corpus = BTreeMap::new();
    let mut omitted = Vec::new();
    for corpus in Corpus::ALL {
        let errs = predictions
            .iter()
            .filter(|p| p.corpus == corpus)
            .map(|p| p.mos_pred - p.mos_label);
        match GroupStats::from_errors(errs) {
            Some(s) => {
                per_corpus.insert(corpus, s);
            }
            None => omitted.push(corpus.name().to_string()),
        }
    }
    let mut aggregates = Vec::new();
    for view in [ViewName::ChallengeSubset, ViewName::Unseen, ViewName::Full] {
        let errs = predictions
            .iter()
            .filter(|p| view.admits(p.corpus))
            .map(|p| p.mos_pred - p.mos_label);
        match GroupStats::from_errors(errs) {
            Some(s) => aggregates.push((view, s)),
            None => omitted.push(format!("{view:?}")),
        }
    }
    EvalReport {
        per_corpus,
        aggregates,
        omitted,
        predictions,
    }
}

pub fn evaluate(model: &Predictor, samples: &[Sample], batch_size: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let preds = predict_samples(model, samples, batch_size)?;
    let records = preds
        .iter()
        .zip(samples)
        .map(|(&p, s)| PredictionRecord {
            id: s.id.clone(),
            corpus: s.corpus,
            mos_pred: 1.0 + 4.0 * p,
            mos_label: s.mos,
        })
        .collect();
    Ok(evaluate_predictions(records))
}
