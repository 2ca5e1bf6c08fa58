#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sqa_core::data::{Corpus, SampleRecord, Split};
use sqa_core::features::{write_embedding, write_wav, FeatureSequence, Waveform, SAMPLE_RATE};
use sqa_core::model::PredictorConfig;
use sqa_core::rng::Xoshiro256;
use sqa_core::training::Sample;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn random_seq(t: usize, d: usize, seed: u64) -> FeatureSequence {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    FeatureSequence::embedding((0..t * d).map(|_| rng.normal() as f32).collect(), t, d, 1).unwrap()
}

pub fn tiny_bilstm(d: usize, layers: usize) -> PredictorConfig {
    PredictorConfig::bilstm(d)
        .with_hidden(8)
        .with_layers(layers)
        .with_feature_layer(0)
}

pub fn tiny_transformer(d: usize, layers: usize) -> PredictorConfig {
    PredictorConfig::transformer(d)
        .with_hidden(8)
        .with_heads(2)
        .with_layers(layers)
        .with_feature_layer(0)
}

/// Frames carry a fixed pattern scaled by a per-sample level `z` plus small
/// noise; the label is affine in `z`.
pub fn planted_samples(n: usize, d: usize, seed: u64) -> Vec<Sample> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let pattern: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            let t = 6 + (i % 5);
            let frames = (0..t * d)
                .map(|k| (z * pattern[k % d] + 0.05 * rng.normal()) as f32)
                .collect();
            Sample {
                id: format!("p{i}"),
                corpus: Corpus::Synthetic,
                streams: vec![FeatureSequence::embedding(frames, t, d, 0).unwrap()],
                mos: 1.5 + 3.0 * z,
            }
        })
        .collect()
}

/// Records with two embedding layers written under `dir`: labels depend only
/// on layer `informative`; layer `noise` is independent of them.
pub fn two_layer_records(dir: &Path, n: usize, informative: u32, noise: u32, seed: u64) -> Vec<SampleRecord> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let d = 6;
    let pattern: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    (0..n)
        .map(|i| {
            let z = rng.next_f64();
            let t = 5 + (i % 4);
            let a: Vec<f32> = (0..t * d)
                .map(|k| (z * pattern[k % d] + 0.05 * rng.normal()) as f32)
                .collect();
            let b: Vec<f32> = (0..t * d).map(|_| rng.normal() as f32).collect();
            let pa = dir.join(format!("r{i}_l{informative}.sqaf"));
            let pb = dir.join(format!("r{i}_l{noise}.sqaf"));
            write_embedding(&FeatureSequence::embedding(a, t, d, informative).unwrap(), &pa).unwrap();
            write_embedding(&FeatureSequence::embedding(b, t, d, noise).unwrap(), &pb).unwrap();
            let mut r = SampleRecord::new(format!("r{i}"), Corpus::Synthetic, 1.0 + 4.0 * z);
            r.feature_paths.insert(informative, pa);
            r.feature_paths.insert(noise, pb);
            r
        })
        .collect()
}

pub fn assign_fixed_splits(records: &mut [SampleRecord], val_every: usize) {
    for (i, r) in records.iter_mut().enumerate() {
        r.split = if i % val_every == 0 {
            Split::Validation
        } else {
            Split::Train
        };
    }
}

/// Harmonic tone with a slow envelope; `seed` picks pitch and phase.
pub fn voiced_clip(secs: f64, seed: u64) -> Waveform {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let f0 = rng.uniform(110.0, 220.0);
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let n = (secs * SAMPLE_RATE as f64) as usize;
    let s = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = 0.2 + 0.15 * (2.0 * std::f64::consts::PI * 3.0 * t + phase).sin();
            let v: f64 = (1..8)
                .map(|k| (2.0 * std::f64::consts::PI * f0 * k as f64 * t + phase * k as f64).sin() / k as f64)
                .sum();
            env * v * 0.5
        })
        .collect();
    Waveform::new(s, SAMPLE_RATE).unwrap()
}

pub fn write_clip(dir: &Path, name: &str, w: &Waveform) -> PathBuf {
    let p = dir.join(format!("{name}.wav"));
    write_wav(&p, w).unwrap();
    p
}
