use serde::Serialize;

use super::config::{EncoderKind, PredictorConfig};
use crate::data::denormalize_mos;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FeatureSource};
use crate::nn::{
    sinusoidal_positions, AttentionPool, BatchNorm, BatchStats, BiLstm, Bound, Graph, Linear, Mode, ParamStore,
    SeqMask, Tensor, TransformerEncoder, Var,
};
use crate::rng::Xoshiro256;

pub const FUSION_W1: &str = "fusion.w1";
pub const FUSION_W2: &str = "fusion.w2";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub normalized: f64,
    pub mos: f64,
    /// Pooling weights over the sample's valid frames.
    pub attention_weights: Vec<f64>,
}

/// Weighted sum `w1·a + w2·b` of two aligned feature streams. Streams whose
/// frame counts differ by one are cut to the shorter length.
pub fn fuse_inputs(a: &FeatureSequence, b: &FeatureSequence, w1: f64, w2: f64) -> Result<FeatureSequence> {
    let (a, b) = align_pair(a, b)?;
    let frames = a
        .frames()
        .iter()
        .zip(b.frames())
        .map(|(&x, &y)| (w1 * x as f64 + w2 * y as f64) as f32)
        .collect();
    FeatureSequence::new(frames, a.num_frames(), a.feature_dim(), FeatureSource::Embedding, None)
}

fn align_pair(a: &FeatureSequence, b: &FeatureSequence) -> Result<(FeatureSequence, FeatureSequence)> {
    if a.feature_dim() != b.feature_dim() {
        return Err(Error::Shape(format!(
            "fusion streams have widths {} and {}",
            a.feature_dim(),
            b.feature_dim()
        )));
    }
    let (ta, tb) = (a.num_frames(), b.num_frames());
    if ta.abs_diff(tb) > 1 {
        return Err(Error::Shape(format!("fusion streams have {ta} and {tb} frames")));
    }
    let t = ta.min(tb);
    Ok((a.truncated(t), b.truncated(t)))
}

/// Padded batch of feature streams in `(B·T) × D` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    pub streams: Vec<Vec<f64>>,
    pub dim: usize,
    pub mask: SeqMask,
}

impl BatchInput {
    /// `samples[b]` holds the one or two streams of sample `b`. Padding is zeros.
    pub fn from_samples(samples: &[&[FeatureSequence]]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("batch with no samples".into()));
        }
        let n_streams = samples[0].len();
        if n_streams == 0 || samples.iter().any(|s| s.len() != n_streams) {
            return Err(Error::Shape(
                "samples in a batch must have the same number of streams".into(),
            ));
        }
        let dim = samples[0][0].feature_dim();
        let aligned: Vec<Vec<FeatureSequence>> = samples
            .iter()
            .map(|s| {
                if s.iter().any(|f| f.feature_dim() != dim) {
                    return Err(Error::Shape(format!("mixed feature widths in batch (expected {dim})")));
                }
                if s.len() == 2 {
                    let (a, b) = align_pair(&s[0], &s[1])?;
                    Ok(vec![a, b])
                } else {
                    Ok(s.to_vec())
                }
            })
            .collect::<Result<_>>()?;
        let lengths: Vec<usize> = aligned.iter().map(|s| s[0].num_frames()).collect();
        let mask = SeqMask::new(lengths)?;
        let tmax = mask.max_len;
        let streams = (0..n_streams)
            .map(|k| {
                let mut data = vec![0.0; mask.rows() * dim];
                for (b, s) in aligned.iter().enumerate() {
                    for (i, &v) in s[k].frames().iter().enumerate() {
                        data[b * tmax * dim + i] = v as f64;
                    }
                }
                data
            })
            .collect();
        Ok(Self { streams, dim, mask })
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// `B × 1` sigmoid outputs.
    pub normalized: Var,
    /// `B × T` pooling weights.
    pub attention: Var,
    /// Batch statistics of each batchnorm site (train mode only).
    pub bn_stats: Vec<(BatchNorm, BatchStats)>,
}

enum Encoder {
    BiLstm(BiLstm),
    Transformer(TransformerEncoder),
}

struct Parts {
    bn_in: BatchNorm,
    proj: Linear,
    encoder: Encoder,
    bn_out: BatchNorm,
    pool: AttentionPool,
    head: Linear,
}

/// Predictor: optional two-stream fusion → input batchnorm → linear
/// down-projection → Bi-LSTM or transformer → batchnorm → attention pooling
/// → linear → sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
}

impl Predictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let parts = Self::parts_for(&config)?;
        if config.fusion().is_some() {
            params.insert(FUSION_W1, Tensor::filled(&[1], 0.5));
            params.insert(FUSION_W2, Tensor::filled(&[1], 0.5));
        }
        parts.bn_in.init(&mut params, &mut buffers);
        parts.proj.init(&mut params, &mut rng);
        match &parts.encoder {
            Encoder::BiLstm(e) => e.init(&mut params, &mut rng),
            Encoder::Transformer(e) => e.init(&mut params, &mut rng),
        }
        parts.bn_out.init(&mut params, &mut buffers);
        parts.pool.init(&mut params, &mut rng);
        parts.head.init(&mut params, &mut rng);
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    fn parts_for(config: &PredictorConfig) -> Result<Parts> {
        let width = config.encoder_width();
        let encoder = match config.encoder {
            EncoderKind::BiLstm => Encoder::BiLstm(BiLstm::new("encoder", config.hidden, config.hidden, config.layers)),
            EncoderKind::Transformer => Encoder::Transformer(TransformerEncoder::new(
                "encoder",
                config.hidden,
                config.heads,
                config.layers,
            )?),
        };
        Ok(Parts {
            bn_in: BatchNorm::new("bn_in", config.input_dim),
            proj: Linear::new("proj", config.input_dim, config.hidden),
            encoder,
            bn_out: BatchNorm::new("bn_out", width),
            pool: AttentionPool::new("pool", width, config.hidden),
            head: Linear::new("head", width, 1),
        })
    }

    pub fn head_weight_name() -> &'static str {
        "head.weight"
    }

    pub fn head_bias_name() -> &'static str {
        "head.bias"
    }

    /// Record forward operations on `g`, reading parameters from `p`.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, batch: &BatchInput, mode: Mode) -> Result<ForwardOutputs> {
        let cfg = &self.config;
        if batch.dim != cfg.input_dim {
            return Err(Error::Shape(format!(
                "features have width {}, model expects {}",
                batch.dim, cfg.input_dim
            )));
        }
        if batch.streams.len() != cfg.streams() {
            return Err(Error::Shape(format!(
                "model takes {} feature stream(s), batch has {}",
                cfg.streams(),
                batch.streams.len()
            )));
        }
        let parts = Self::parts_for(cfg)?;
        let mask = &batch.mask;
        let rows = mask.rows();
        let valid = mask.row_flags();
        let mut bn_stats = Vec::new();

        let first = g.constant(batch.streams[0].clone(), rows, batch.dim);
        let x = if cfg.fusion().is_some() {
            let second = g.constant(batch.streams[1].clone(), rows, batch.dim);
            let a = g.mul_scalar(first, p.get(FUSION_W1)?)?;
            let b = g.mul_scalar(second, p.get(FUSION_W2)?)?;
            g.add(a, b)?
        } else {
            first
        };

        let (x, stats) = parts.bn_in.forward(g, p, &self.buffers, x, &valid, mode)?;
        if let Some(s) = stats {
            bn_stats.push((parts.bn_in.clone(), s));
        }
        let x = parts.proj.forward(g, p, x)?;
        let h = match &parts.encoder {
            Encoder::BiLstm(e) => e.forward(g, p, x, mask)?,
            Encoder::Transformer(e) => {
                let pe = sinusoidal_positions(mask.max_len, cfg.hidden);
                let tiled: Vec<f64> = (0..mask.batch()).flat_map(|_| pe.iter().copied()).collect();
                let pe = g.constant(tiled, rows, cfg.hidden);
                let x = g.add(x, pe)?;
                e.forward(g, p, x, mask)?
            }
        };
        let (h, stats) = parts.bn_out.forward(g, p, &self.buffers, h, &valid, mode)?;
        if let Some(s) = stats {
            bn_stats.push((parts.bn_out.clone(), s));
        }
        let (pooled, attention) = parts.pool.forward(g, p, h, mask)?;
        let logit = parts.head.forward(g, p, pooled)?;
        let normalized = g.sigmoid(logit);
        Ok(ForwardOutputs {
            normalized,
            attention,
            bn_stats,
        })
    }

    /// Eval-mode predictions for a padded batch.
    pub fn predict_batch(&self, batch: &BatchInput) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward_graph(&mut g, &p, batch, Mode::Eval)?;
        let scores = g.value(out.normalized);
        let alpha = g.value(out.attention);
        let tmax = batch.mask.max_len;
        (0..batch.mask.batch())
            .map(|b| {
                let normalized = scores[b];
                let len = batch.mask.lengths[b];
                Ok(Prediction {
                    normalized,
                    mos: denormalize_mos(normalized)?,
                    attention_weights: alpha[b * tmax..b * tmax + len].to_vec(),
                })
            })
            .collect()
    }

    /// Eval-mode predictions; each sample is a slice of one or two streams.
    pub fn predict(&self, samples: &[&[FeatureSequence]]) -> Result<Vec<Prediction>> {
        self.predict_batch(&BatchInput::from_samples(samples)?)
    }

    pub fn predict_one(&self, streams: &[FeatureSequence]) -> Result<Prediction> {
        Ok(self.predict(&[streams])?.remove(0))
    }

    pub fn fusion_weights(&self) -> Option<(f64, f64)> {
        let w1 = self.params.get(FUSION_W1).ok()?.data[0];
        let w2 = self.params.get(FUSION_W2).ok()?.data[0];
        Some((w1, w2))
    }

    /// Apply the running-statistics update for each batchnorm site.
    pub fn update_running_stats(&mut self, stats: &[(BatchNorm, BatchStats)]) -> Result<()> {
        for (bn, s) in stats {
            bn.update_running(&mut self.buffers, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        FeatureSequence::embedding((0..t * d).map(|_| rng.normal() as f32).collect(), t, d, 1).unwrap()
    }

    fn tiny(kind: EncoderKind) -> PredictorConfig {
        match kind {
            EncoderKind::BiLstm => PredictorConfig::bilstm(6).with_hidden(4).with_layers(1),
            EncoderKind::Transformer => PredictorConfig::transformer(6)
                .with_hidden(4)
                .with_heads(2)
                .with_layers(1),
        }
    }

    #[test]
    fn zeroed_head_predicts_midpoint() {
        for kind in [EncoderKind::BiLstm, EncoderKind::Transformer] {
            let mut m = Predictor::new(tiny(kind), 3).unwrap();
            m.params.get_mut("head.weight").unwrap().data.fill(0.0);
            m.params.get_mut("head.bias").unwrap().data.fill(0.0);
            let (a, b) = (seq(5, 6, 1), seq(3, 6, 2));
            for p in m
                .predict(&[std::slice::from_ref(&a), std::slice::from_ref(&b)])
                .unwrap()
            {
                assert_eq!(p.normalized, 0.5);
                assert_eq!(p.mos, 3.0);
            }
        }
    }

    #[test]
    fn dim_mismatch_is_error() {
        let m = Predictor::new(tiny(EncoderKind::BiLstm), 0).unwrap();
        let s = seq(4, 5, 0);
        assert_eq!(m.predict_one(&[s]).unwrap_err().category(), "shape");
    }

    #[test]
    fn fusion_with_unit_weights_reproduces_stream_a() {
        let a = seq(5, 3, 1);
        let b = seq(6, 3, 2);
        let fused = fuse_inputs(&a, &b, 1.0, 0.0).unwrap();
        assert_eq!(fused.frames(), a.frames());
        let same = fuse_inputs(&a, &a, 0.5, 0.5).unwrap();
        assert_eq!(same.frames(), a.frames());
        assert!(fuse_inputs(&a, &seq(8, 3, 3), 1.0, 0.0).is_err());
        assert!(fuse_inputs(&a, &seq(5, 4, 3), 1.0, 0.0).is_err());
    }

    #[test]
    fn transformer_config_rejects_indivisible_heads() {
        let cfg = PredictorConfig::transformer(8).with_hidden(6).with_heads(4);
        assert_eq!(Predictor::new(cfg, 0).unwrap_err().category(), "config");
    }
}
