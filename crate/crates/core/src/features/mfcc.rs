//! MFCC front end with the common toolkit defaults at 16 kHz:
//! periodic Hann window of 400 samples, hop 200, centered reflect padding,
//! power spectrum, 128 HTK mel filters over 0–8000 Hz without area
//! normalization, power-to-dB (amin 1e-10, 80 dB dynamic range per
//! utterance), orthonormal DCT-II, first 40 coefficients.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureSequence, FeatureSource, Waveform, SAMPLE_RATE};
use crate::data::MFCC_LAYER;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub amin: f64,
    pub top_db: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 400,
            hop: 200,
            n_mels: 128,
            n_mfcc: 40,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
            amin: 1e-10,
            top_db: 80.0,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters, `n_freqs × n_mels`, row-major.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<f64> {
    let n_freqs = cfg.n_fft / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let freqs: Vec<f64> = (0..n_freqs)
        .map(|i| nyquist * i as f64 / (n_freqs - 1) as f64)
        .collect();
    let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; n_freqs * cfg.n_mels];
    for (i, &f) in freqs.iter().enumerate() {
        for m in 0..cfg.n_mels {
            let down = (f - edges[m]) / (edges[m + 1] - edges[m]);
            let up = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
            fb[i * cfg.n_mels + m] = down.min(up).max(0.0);
        }
    }
    fb
}

/// Reflect index `i` (may be negative or past the end) into `0..n`,
/// repeating the reflection for pads longer than the signal.
fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as i64 {
        k = period - k;
    }
    k as usize
}

pub fn extract_mfcc(wave: &Waveform) -> Result<FeatureSequence> {
    extract_mfcc_with(wave, &MfccConfig::default())
}

pub fn extract_mfcc_with(wave: &Waveform, cfg: &MfccConfig) -> Result<FeatureSequence> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Validation(format!(
            "MFCC expects {} Hz input, got {} Hz",
            cfg.sample_rate, wave.sample_rate
        )));
    }
    let n = wave.samples.len();
    if n < cfg.hop {
        return Err(Error::Validation(format!(
            "waveform of {n} samples is shorter than one hop ({})",
            cfg.hop
        )));
    }
    let pad = cfg.n_fft / 2;
    let num_frames = n / cfg.hop + 1;
    let n_freqs = cfg.n_fft / 2 + 1;
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.n_fft as f64).cos())
        .collect();
    let fb = mel_filterbank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);

    let mut mel_db = vec![0.0; num_frames * cfg.n_mels];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; n_freqs];
    for t in 0..num_frames {
        let start = (t * cfg.hop) as i64 - pad as i64;
        for (j, slot) in buf.iter_mut().enumerate() {
            let x = wave.samples[reflect_index(start + j as i64, n)];
            *slot = Complex::new(x * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let row = &mut mel_db[t * cfg.n_mels..(t + 1) * cfg.n_mels];
        for (m, out) in row.iter_mut().enumerate() {
            let e: f64 = power.iter().enumerate().map(|(i, p)| p * fb[i * cfg.n_mels + m]).sum();
            *out = 10.0 * e.max(cfg.amin).log10();
        }
    }
    let floor = mel_db.iter().copied().fold(f64::NEG_INFINITY, f64::max) - cfg.top_db;
    mel_db.iter_mut().for_each(|v| *v = v.max(floor));

    let dct = dct_ortho(cfg.n_mfcc, cfg.n_mels);
    let mut out = Vec::with_capacity(num_frames * cfg.n_mfcc);
    for t in 0..num_frames {
        let row = &mel_db[t * cfg.n_mels..(t + 1) * cfg.n_mels];
        for k in 0..cfg.n_mfcc {
            let basis = &dct[k * cfg.n_mels..(k + 1) * cfg.n_mels];
            out.push(row.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>() as f32);
        }
    }
    FeatureSequence::new(out, num_frames, cfg.n_mfcc, FeatureSource::Mfcc, Some(MFCC_LAYER))
}

/// Orthonormal DCT-II basis, `n_out × n_in`, row-major.
fn dct_ortho(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut basis = Vec::with_capacity(n_out * n_in);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for i in 0..n_in {
            basis.push(scale * (PI / n_in as f64 * (i as f64 + 0.5) * k as f64).cos());
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_with_center_padding() {
        let w = Waveform::new(vec![0.01; 16000], 16000).unwrap();
        let f = extract_mfcc(&w).unwrap();
        assert_eq!(f.num_frames(), 81);
        assert_eq!(f.feature_dim(), 40);
        assert_eq!(f.source, FeatureSource::Mfcc);
    }

    #[test]
    fn silence_gives_identical_frames_of_the_db_floor() {
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let f = extract_mfcc(&w).unwrap();
        let first = f.frame(0).to_vec();
        for t in 1..f.num_frames() {
            assert_eq!(f.frame(t), &first[..]);
        }
        // Constant -100 dB vector: only the DC coefficient survives the DCT.
        let c0 = -100.0 * (128f64).sqrt();
        assert!((first[0] as f64 - c0).abs() < 1e-3);
        for &c in &first[1..] {
            assert!(c.abs() < 1e-3);
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let w = Waveform::new(vec![0.1; 150], 16000).unwrap();
        assert_eq!(extract_mfcc(&w).unwrap_err().category(), "validation");
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let w = Waveform::new(vec![0.1; 8000], 8000).unwrap();
        assert!(extract_mfcc(&w).is_err());
    }

    #[test]
    fn reflect_matches_numpy_semantics() {
        // np.pad([0,1,2,3], 5, mode="reflect")
        let got: Vec<usize> = (-5..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, [1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
    }

    #[test]
    fn self_concatenation_roughly_doubles_frames() {
        let x: Vec<f64> = (0..8123).map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.5).collect();
        let w = Waveform::new(x.clone(), 16000).unwrap();
        let t = extract_mfcc(&w).unwrap().num_frames() as i64;
        let doubled = Waveform::new([x.clone(), x].concat(), 16000).unwrap();
        let t2 = extract_mfcc(&doubled).unwrap().num_frames() as i64;
        assert!((t2 - (2 * t - 1)).abs() <= 1);
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let n = 16;
        let b = dct_ortho(n, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }
}
