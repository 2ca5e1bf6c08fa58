use serde::{Deserialize, Serialize};

use crate::data::MFCC_LAYER;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    BiLstm,
    Transformer,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bilstm" | "lstm" | "blstm" => Ok(EncoderKind::BiLstm),
            "transformer" => Ok(EncoderKind::Transformer),
            other => Err(Error::Config(format!("unknown encoder '{other}'"))),
        }
    }
}

/// Architecture of one predictor. `feature_layers` names the input
/// stream(s) by feature key (an embedding layer index, or
/// [`MFCC_LAYER`]); two keys turn on early fusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub encoder: EncoderKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub feature_layers: Vec<u32>,
}

impl PredictorConfig {
    /// Bi-LSTM body with 32 units per direction and 2 layers.
    pub fn bilstm(input_dim: usize) -> Self {
        Self {
            encoder: EncoderKind::BiLstm,
            input_dim,
            hidden: 32,
            layers: 2,
            heads: 1,
            feature_layers: vec![MFCC_LAYER],
        }
    }

    /// Transformer body with width 32, 4 heads and 4 layers.
    pub fn transformer(input_dim: usize) -> Self {
        Self {
            encoder: EncoderKind::Transformer,
            input_dim,
            hidden: 32,
            layers: 4,
            heads: 4,
            feature_layers: vec![MFCC_LAYER],
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_feature_layer(mut self, layer: u32) -> Self {
        self.feature_layers = vec![layer];
        self
    }

    pub fn with_fusion(mut self, a: u32, b: u32) -> Self {
        self.feature_layers = vec![a, b];
        self
    }

    pub fn fusion(&self) -> Option<(u32, u32)> {
        match self.feature_layers.as_slice() {
            [a, b] => Some((*a, *b)),
            _ => None,
        }
    }

    pub fn streams(&self) -> usize {
        self.feature_layers.len()
    }

    /// Width of the encoder output.
    pub fn encoder_width(&self) -> usize {
        match self.encoder {
            EncoderKind::BiLstm => 2 * self.hidden,
            EncoderKind::Transformer => self.hidden,
        }
    }

    /// Short identifier used in sweep tables.
    pub fn id(&self) -> String {
        match self.encoder {
            EncoderKind::BiLstm => format!("bilstm-h{}-l{}", self.hidden, self.layers),
            EncoderKind::Transformer => {
                format!("transformer-h{}-a{}-l{}", self.hidden, self.heads, self.layers)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("input_dim, hidden and layers must be positive".into()));
        }
        if self.encoder == EncoderKind::Transformer && (self.heads == 0 || !self.hidden.is_multiple_of(self.heads)) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(1..=2).contains(&self.feature_layers.len()) {
            return Err(Error::Config("a predictor takes one or two feature streams".into()));
        }
        if self.feature_layers.len() == 2 && self.feature_layers[0] == self.feature_layers[1] {
            return Err(Error::Config("fusion needs two distinct layers".into()));
        }
        Ok(())
    }
}
