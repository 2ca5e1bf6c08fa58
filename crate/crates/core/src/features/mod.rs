//! Waveforms, frame-level feature sequences and the readers/writers for both.

mod embedding;
mod mfcc;
mod resample;
mod wav;

pub use embedding::{
    decode_embedding, encode_embedding, read_embedding, write_embedding, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub use mfcc::{extract_mfcc, extract_mfcc_with, mel_filterbank, MfccConfig};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("waveform has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                context: "waveform samples".into(),
            });
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    Mfcc,
    Embedding,
}

/// A T×D matrix of frame features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f32>,
    num_frames: usize,
    feature_dim: usize,
    pub source: FeatureSource,
    pub layer_index: Option<u32>,
}

impl FeatureSequence {
    pub fn new(
        frames: Vec<f32>,
        num_frames: usize,
        feature_dim: usize,
        source: FeatureSource,
        layer_index: Option<u32>,
    ) -> Result<Self> {
        if num_frames == 0 || feature_dim == 0 {
            return Err(Error::Shape(format!(
                "feature sequence must be non-empty, got {num_frames}x{feature_dim}"
            )));
        }
        if frames.len() != num_frames * feature_dim {
            return Err(Error::Shape(format!(
                "{} values for a {num_frames}x{feature_dim} sequence",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature frames".into(),
            });
        }
        Ok(Self {
            frames,
            num_frames,
            feature_dim,
            source,
            layer_index,
        })
    }

    pub fn embedding(frames: Vec<f32>, num_frames: usize, feature_dim: usize, layer: u32) -> Result<Self> {
        Self::new(frames, num_frames, feature_dim, FeatureSource::Embedding, Some(layer))
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.feature_dim..(t + 1) * self.feature_dim]
    }

    /// Keep only the first `t` frames.
    pub fn truncated(&self, t: usize) -> Self {
        let t = t.clamp(1, self.num_frames);
        Self {
            frames: self.frames[..t * self.feature_dim].to_vec(),
            num_frames: t,
            ..self.clone()
        }
    }
}
