//! SQAF embedding files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SQAF"
//! 4       4     version (u32 LE) = 1
//! 8       4     layer_index (u32 LE), 0xFFFFFFFF for MFCC
//! 12      4     num_frames (u32 LE)
//! 16      4     feature_dim (u32 LE)
//! 20      4·T·D frames, f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{FeatureSequence, FeatureSource};
use crate::data::MFCC_LAYER;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"SQAF";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_embedding(seq: &FeatureSequence) -> Vec<u8> {
    let layer = match seq.source {
        FeatureSource::Mfcc => MFCC_LAYER,
        FeatureSource::Embedding => seq.layer_index.unwrap_or(MFCC_LAYER),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.frames().len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&layer.to_le_bytes());
    out.extend_from_slice(&(seq.num_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.feature_dim() as u32).to_le_bytes());
    for v in seq.frames() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_embedding(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "embedding file of {} bytes is shorter than its header",
            bytes.len()
        )));
    }
    if bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("bad embedding magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported embedding version {version}")));
    }
    let layer = u32_at(bytes, 8);
    let frames = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("embedding header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "header says {frames}x{dim} frames ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let source = if layer == MFCC_LAYER {
        FeatureSource::Mfcc
    } else {
        FeatureSource::Embedding
    };
    FeatureSequence::new(data, frames, dim, source, Some(layer)).map_err(|e| Error::Format(e.to_string()))
}

/// Write an embedding-layer sequence. MFCC sequences are accepted as well and
/// carry the 0xFFFFFFFF layer marker.
pub fn write_embedding(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    if seq.source == FeatureSource::Embedding && seq.layer_index.is_none() {
        return Err(Error::Validation("embedding sequence without a layer index".into()));
    }
    let path = path.as_ref();
    fs::write(path, encode_embedding(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256;
    use proptest::prelude::*;

    fn random_seq(t: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let data = (0..t * d).map(|_| rng.normal() as f32).collect();
        FeatureSequence::embedding(data, t, d, 7).unwrap()
    }

    #[test]
    fn file_round_trip_7x1024() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.sqaf");
        let seq = random_seq(7, 1024, 1);
        write_embedding(&seq, &p).unwrap();
        assert_eq!(read_embedding(&p).unwrap(), seq);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_embedding(&random_seq(2, 3, 0));
        assert_eq!(&bytes[..4], b"SQAF");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 7);
        assert_eq!(u32_at(&bytes, 12), 2);
        assert_eq!(u32_at(&bytes, 16), 3);
        assert_eq!(bytes.len(), 20 + 4 * 6);
    }

    #[test]
    fn truncated_and_corrupt_files_are_format_errors() {
        let bytes = encode_embedding(&random_seq(3, 4, 2));
        for cut in [0, 3, 19, 20, bytes.len() - 1] {
            assert_eq!(decode_embedding(&bytes[..cut]).unwrap_err().category(), "format");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_embedding(&bad).unwrap_err().category(), "format");
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode_embedding(&bad).unwrap_err().category(), "format");
        let mut bad = bytes;
        bad.extend_from_slice(&[0; 4]);
        assert_eq!(decode_embedding(&bad).unwrap_err().category(), "format");
    }

    #[test]
    fn zero_dims_rejected() {
        let mut bytes = encode_embedding(&random_seq(1, 1, 3));
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes());
        bytes.truncate(20);
        assert_eq!(decode_embedding(&bytes).unwrap_err().category(), "format");
    }

    proptest! {
        #[test]
        fn codec_is_bit_exact(t in 1usize..6, d in 1usize..9, bits in proptest::collection::vec(any::<u32>(), 48)) {
            let data: Vec<f32> = (0..t * d)
                .map(|i| f32::from_bits(bits[i % bits.len()]))
                .map(|v| if v.is_finite() { v } else { 0.5 })
                .collect();
            let seq = FeatureSequence::embedding(data, t, d, 3).unwrap();
            let back = decode_embedding(&encode_embedding(&seq)).unwrap();
            let a: Vec<u32> = seq.frames().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.frames().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.layer_index, Some(3));
        }
    }
}
