//! SQAC checkpoint files.
//!
//! ```text
//! magic "SQAC" | version u32 | config_len u32 | config (UTF-8 JSON)
//! tensor_count u32
//! per tensor: name_len u32 | name (UTF-8) | ndim u32 | dims u32×ndim | f32×∏dims
//! ```
//! All integers and floats little-endian. Tensors cover trainable weights,
//! batchnorm running statistics and fusion weights.

use std::fs;
use std::path::Path;

use super::config::PredictorConfig;
use super::predictor::Predictor;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SQAC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape.len() as u32);
    for &d in &t.shape {
        put_u32(out, d as u32);
    }
    for &v in &t.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Predictor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put_u32(&mut out, (model.params.len() + model.buffers.len()) as u32);
    for (name, t) in model.params.iter().chain(model.buffers.iter()) {
        put_tensor(&mut out, name, t);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Predictor> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config: PredictorConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut model = Predictor::new(config, 0).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let expected = model.params.len() + model.buffers.len();
    if count != expected {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, model needs {expected}"
        )));
    }
    let mut seen = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("tensor rank")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
            "tensor data",
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let target = if model.params.contains(&name) {
            model.params.get_mut(&name)?
        } else if model.buffers.contains(&name) {
            model.buffers.get_mut(&name)?
        } else {
            return Err(Error::Format(format!("unexpected tensor '{name}' in checkpoint")));
        };
        if target.shape != shape {
            return Err(Error::Format(format!(
                "tensor '{name}' has shape {shape:?}, model needs {:?}",
                target.shape
            )));
        }
        if seen.contains(&name) {
            return Err(Error::Format(format!("tensor '{name}' appears twice")));
        }
        target.data = data;
        seen.insert(name, Tensor::zeros(&[0]));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Predictor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Predictor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderKind;

    fn model(kind: EncoderKind) -> Predictor {
        let cfg = match kind {
            EncoderKind::BiLstm => PredictorConfig::bilstm(5).with_hidden(4).with_layers(2),
            EncoderKind::Transformer => PredictorConfig::transformer(5)
                .with_hidden(4)
                .with_heads(2)
                .with_layers(1),
        };
        let mut m = Predictor::new(cfg, 9).unwrap();
        m.params.round_to_f32();
        m.buffers.round_to_f32();
        m
    }

    #[test]
    fn round_trip_restores_every_tensor() {
        for kind in [EncoderKind::BiLstm, EncoderKind::Transformer] {
            let m = model(kind);
            let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.config.encoder, kind);
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = encode_checkpoint(&model(EncoderKind::BiLstm));
        bytes[4] = 9;
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn tampering_is_a_format_error() {
        let bytes = encode_checkpoint(&model(EncoderKind::BiLstm));
        assert_eq!(
            decode_checkpoint(&bytes[..bytes.len() - 2]).unwrap_err().category(),
            "format"
        );
        let mut longer = bytes.clone();
        longer.push(0);
        assert_eq!(decode_checkpoint(&longer).unwrap_err().category(), "format");
        assert_eq!(decode_checkpoint(b"SQAF").unwrap_err().category(), "format");
    }

    #[test]
    fn negative_fusion_weights_survive() {
        let cfg = PredictorConfig::bilstm(3)
            .with_hidden(2)
            .with_layers(1)
            .with_fusion(10, 41);
        let mut m = Predictor::new(cfg, 1).unwrap();
        m.params.get_mut("fusion.w1").unwrap().data[0] = -0.75;
        m.params.get_mut("fusion.w2").unwrap().data[0] = 0.10;
        m.params.round_to_f32();
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        let (w1, w2) = back.fusion_weights().unwrap();
        assert_eq!(w1, -0.75);
        assert_eq!(w2, 0.1f32 as f64);
    }
}
