//! Graded signal degradations and the sensitivity protocol: corrupt the
//! audio, re-extract features, re-predict, and compare against the fixed
//! labels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::features::{extract_mfcc_with, read_wav, FeatureSequence, MfccConfig, Waveform, SAMPLE_RATE};
use crate::model::Predictor;
use crate::rng::{derive_seed, Xoshiro256};

pub const NUM_LEVELS: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CorruptionKind {
    WhiteNoise,
    OverlappingSpeech,
    Reverb,
    LowPass,
    HighPass,
    TimeMask,
    Mp3,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::WhiteNoise,
        CorruptionKind::OverlappingSpeech,
        CorruptionKind::Reverb,
        CorruptionKind::LowPass,
        CorruptionKind::HighPass,
        CorruptionKind::TimeMask,
        CorruptionKind::Mp3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::WhiteNoise => "white-noise",
            CorruptionKind::OverlappingSpeech => "overlapping-speech",
            CorruptionKind::Reverb => "reverb",
            CorruptionKind::LowPass => "low-pass",
            CorruptionKind::HighPass => "high-pass",
            CorruptionKind::TimeMask => "time-mask",
            CorruptionKind::Mp3 => "mp3",
        }
    }

    /// Unit of the level parameter.
    pub fn unit(self) -> &'static str {
        match self {
            CorruptionKind::WhiteNoise => "snr_db",
            CorruptionKind::OverlappingSpeech => "sir_db",
            CorruptionKind::Reverb => "t60_s",
            CorruptionKind::LowPass | CorruptionKind::HighPass => "cutoff_hz",
            CorruptionKind::TimeMask => "masked_fraction",
            CorruptionKind::Mp3 => "bitrate_kbps",
        }
    }

    /// Kind-specific parameter for `level`; `None` at level 0 (no corruption).
    pub fn param(self, level: u8) -> Result<Option<f64>> {
        const GRID: [[f64; 5]; 7] = [
            [40.0, 30.0, 20.0, 10.0, 0.0],
            [20.0, 15.0, 10.0, 5.0, 0.0],
            [0.1, 0.2, 0.4, 0.8, 1.6],
            [4000.0, 2000.0, 1000.0, 500.0, 250.0],
            [250.0, 500.0, 1000.0, 2000.0, 4000.0],
            [0.05, 0.10, 0.20, 0.40, 0.60],
            [128.0, 64.0, 32.0, 16.0, 8.0],
        ];
        if level >= NUM_LEVELS {
            return Err(Error::Config(format!("corruption level {level} outside 0..=5")));
        }
        let row = CorruptionKind::ALL.iter().position(|&k| k == self).unwrap();
        Ok(level.checked_sub(1).map(|l| GRID[row][l as usize]))
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name().replace('-', "") == key || format!("{k:?}").to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub level: u8,
    pub seed: u64,
}

/// Resources some corruptions need: interferers for overlapping speech and
/// an external codec for MP3.
#[derive(Debug, Clone, Default)]
pub struct CorruptionContext {
    pub interferers: Vec<Arc<Waveform>>,
    pub codec_path: Option<PathBuf>,
}

/// Apply `spec` to `w`. Level 0 returns the input unchanged; every other
/// level keeps the input length. The result is not peak-normalized.
pub fn corrupt(w: &Waveform, spec: &CorruptionSpec, ctx: &CorruptionContext) -> Result<Waveform> {
    match spec.kind.param(spec.level)? {
        None => Ok(w.clone()),
        Some(p) => corrupt_with(w, spec.kind, p, spec.seed, ctx),
    }
}

/// Apply `kind` with an explicit parameter value.
pub fn corrupt_with(
    w: &Waveform,
    kind: CorruptionKind,
    param: f64,
    seed: u64,
    ctx: &CorruptionContext,
) -> Result<Waveform> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::Validation(format!(
            "corruption expects {SAMPLE_RATE} Hz input, got {}",
            w.sample_rate
        )));
    }
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let samples = match kind {
        CorruptionKind::WhiteNoise => {
            let noise: Vec<f64> = (0..w.len()).map(|_| rng.normal()).collect();
            mix_at_ratio(&w.samples, &noise, param)?
        }
        CorruptionKind::OverlappingSpeech => {
            if ctx.interferers.is_empty() {
                return Err(Error::Unavailable("overlapping speech needs an interferer pool".into()));
            }
            let other = &ctx.interferers[rng.below(ctx.interferers.len() as u64) as usize];
            let offset = rng.below(other.len() as u64) as usize;
            let tiled: Vec<f64> = (0..w.len())
                .map(|i| other.samples[(offset + i) % other.len()])
                .collect();
            mix_at_ratio(&w.samples, &tiled, param)?
        }
        CorruptionKind::Reverb => {
            let mut rir = reverb_rir(param, SAMPLE_RATE, &mut rng);
            let energy = rir.iter().map(|v| v * v).sum::<f64>().sqrt();
            rir.iter_mut().for_each(|v| *v /= energy);
            let mut y = fft_convolve(&w.samples, &rir);
            y.truncate(w.len());
            y
        }
        CorruptionKind::LowPass => filtfilt(&Biquad::lowpass(param, SAMPLE_RATE as f64)?, &w.samples),
        CorruptionKind::HighPass => filtfilt(&Biquad::highpass(param, SAMPLE_RATE as f64)?, &w.samples),
        CorruptionKind::TimeMask => {
            let (start, len) = mask_window(w.len(), param, &mut rng)?;
            let mut y = w.samples.clone();
            y[start..start + len].iter_mut().for_each(|v| *v = 0.0);
            y
        }
        CorruptionKind::Mp3 => {
            let codec = ctx
                .codec_path
                .as_deref()
                .ok_or_else(|| Error::Unavailable("mp3 needs an external codec (--codec-path)".into()))?;
            mp3_round_trip(w, param, codec)?
        }
    };
    Waveform::new(samples, w.sample_rate)
}

/// Scale down to a peak of 1 when the signal would clip; otherwise return
/// it unchanged.
pub fn peak_normalize(w: Waveform) -> Waveform {
    let peak = w.peak();
    if peak <= 1.0 {
        return w;
    }
    Waveform {
        samples: w.samples.iter().map(|v| v / peak).collect(),
        sample_rate: w.sample_rate,
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// `signal + k·interference` with `k` chosen so the realized power ratio is
/// exactly `ratio_db`.
pub fn mix_at_ratio(signal: &[f64], interference: &[f64], ratio_db: f64) -> Result<Vec<f64>> {
    let (s, n) = (rms(signal), rms(interference));
    if s == 0.0 || n == 0.0 {
        return Err(Error::Validation(
            "cannot set a power ratio against a silent signal".into(),
        ));
    }
    let k = s / (n * 10f64.powf(ratio_db / 20.0));
    Ok(signal.iter().zip(interference).map(|(a, b)| a + k * b).collect())
}

/// Raw exponentially decaying noise RIR, `ceil(t60·sr)` taps long, before
/// energy normalization.
pub fn reverb_rir(t60: f64, sample_rate: u32, rng: &mut Xoshiro256) -> Vec<f64> {
    let sr = sample_rate as f64;
    let n = ((t60 * sr).ceil() as usize).max(1);
    let rate = 3.0 * std::f64::consts::LN_10 / t60;
    (0..n).map(|i| rng.normal() * (-(i as f64 / sr) * rate).exp()).collect()
}

/// Full linear convolution via FFT.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(n, Complex::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Second-order section, normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn design(cutoff: f64, fs: f64, high: bool) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::Config(format!("cutoff {cutoff} Hz outside (0, {})", fs / 2.0)));
        }
        let w0 = 2.0 * std::f64::consts::PI * cutoff / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / std::f64::consts::SQRT_2;
        let a0 = 1.0 + alpha;
        let b = if high {
            [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0]
        } else {
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0]
        };
        Ok(Self {
            b: b.map(|v| v / a0),
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        })
    }

    /// Butterworth (Q = 1/√2) low-pass.
    pub fn lowpass(cutoff: f64, fs: f64) -> Result<Self> {
        Self::design(cutoff, fs, false)
    }

    pub fn highpass(cutoff: f64, fs: f64) -> Result<Self> {
        Self::design(cutoff, fs, true)
    }

    /// Direct form II transposed.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + z1;
                z1 = self.b[1] * v - self.a[0] * y + z2;
                z2 = self.b[2] * v - self.a[1] * y;
                y
            })
            .collect()
    }

    pub fn magnitude_at(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / fs;
        let z1 = Complex::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = Complex::new(1.0, 0.0) + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

/// Zero-phase forward-backward filtering with odd reflection padding at
/// both ends.
pub fn filtfilt(f: &Biquad, x: &[f64]) -> Vec<f64> {
    let pad = 9.min(x.len().saturating_sub(1));
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    let last = x[x.len() - 1];
    ext.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));
    let mut y = f.apply(&ext);
    y.reverse();
    let mut y = f.apply(&y);
    y.reverse();
    y[pad..pad + x.len()].to_vec()
}

/// `(start, len)` of the single masked window, `len = floor(fraction·n)`.
pub fn mask_window(n: usize, fraction: f64, rng: &mut Xoshiro256) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("mask fraction {fraction} outside [0, 1]")));
    }
    let len = (fraction * n as f64).floor() as usize;
    let start = rng.below((n - len + 1) as u64) as usize;
    Ok((start, len))
}

fn run_codec(codec: &Path, args: &[&std::ffi::OsStr]) -> Result<()> {
    let out = Command::new(codec)
        .args(args)
        .output()
        .map_err(|e| Error::Unavailable(format!("codec '{}' could not be started: {e}", codec.display())))?;
    if !out.status.success() {
        return Err(Error::Unavailable(format!(
            "codec '{}' failed: {}",
            codec.display(),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

/// Encode at `kbps` and decode back with a lame-compatible executable, then
/// trim or zero-pad to the input length.
fn mp3_round_trip(w: &Waveform, kbps: f64, codec: &Path) -> Result<Vec<f64>> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let src = dir.path().join("in.wav");
    let mp3 = dir.path().join("coded.mp3");
    let dec = dir.path().join("decoded.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let write = || -> std::result::Result<(), hound::Error> {
        let mut wr = hound::WavWriter::create(&src, spec)?;
        for &v in &w.samples {
            wr.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        wr.finalize()
    };
    write().map_err(|e| Error::Format(format!("writing codec input: {e}")))?;
    let rate = format!("{}", kbps.round() as u32);
    run_codec(
        codec,
        &[
            "--quiet".as_ref(),
            "-b".as_ref(),
            rate.as_ref(),
            src.as_os_str(),
            mp3.as_os_str(),
        ],
    )?;
    run_codec(
        codec,
        &[
            "--quiet".as_ref(),
            "--decode".as_ref(),
            mp3.as_os_str(),
            dec.as_os_str(),
        ],
    )?;
    let mut y = read_wav(&dec)?.samples;
    y.resize(w.len(), 0.0);
    Ok(y)
}

/// Turns a waveform into the model's input stream(s).
pub trait FeatureExtractor: Sync {
    fn extract(&self, w: &Waveform) -> Result<Vec<FeatureSequence>>;
}

#[derive(Debug, Clone, Default)]
pub struct MfccExtractor {
    pub config: MfccConfig,
}

impl FeatureExtractor for MfccExtractor {
    fn extract(&self, w: &Waveform) -> Result<Vec<FeatureSequence>> {
        Ok(vec![extract_mfcc_with(w, &self.config)?])
    }
}

/// Stand-in for feature paths that cannot run here (embeddings need the
/// external dump step).
#[derive(Debug, Clone)]
pub struct UnavailableExtractor {
    pub reason: String,
}

impl FeatureExtractor for UnavailableExtractor {
    fn extract(&self, _: &Waveform) -> Result<Vec<FeatureSequence>> {
        Err(Error::Unavailable(self.reason.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityCurve {
    pub kind: CorruptionKind,
    pub levels: Vec<u8>,
    pub params: Vec<Option<f64>>,
    pub rmse: Vec<f64>,
    /// `rmse[0] / rmse[l]`; 0/0 counts as 1.
    pub relative: Vec<f64>,
    pub available: bool,
    pub note: Option<String>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// RMSE of `mos` predictions at each (kind, level) against the fixed labels.
/// Level 0 is always evaluated first. Records need audio. A kind whose
/// corruption or feature path is unavailable yields an unavailable curve.
pub fn sensitivity_analysis(
    model: &Predictor,
    records: &[SampleRecord],
    kinds: &[CorruptionKind],
    levels: &[u8],
    extractor: &dyn FeatureExtractor,
    codec_path: Option<&Path>,
    seed: u64,
) -> Result<Vec<SensitivityCurve>> {
    if records.is_empty() {
        return Err(Error::Empty("sensitivity analysis needs records".into()));
    }
    let mut levels: Vec<u8> = levels.to_vec();
    levels.push(0);
    levels.sort_unstable();
    levels.dedup();
    for &l in &levels {
        CorruptionKind::WhiteNoise.param(l)?;
    }
    let waves: Vec<Arc<Waveform>> = records
        .par_iter()
        .map(|r| {
            let path = r.audio_path.as_ref().ok_or_else(|| {
                Error::Validation(format!("record '{}' has no audio; corruption needs waveforms", r.id))
            })?;
            read_wav(path).map(Arc::new)
        })
        .collect::<Result<_>>()?;

    let predict = |kind_idx: usize, kind: CorruptionKind, level: u8, i: usize| -> Result<f64> {
        let ctx = CorruptionContext {
            interferers: waves
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, w)| w.clone())
                .collect(),
            codec_path: codec_path.map(Path::to_path_buf),
        };
        let spec = CorruptionSpec {
            kind,
            level,
            seed: derive_seed(&[seed, i as u64, kind_idx as u64, level as u64]),
        };
        let w = peak_normalize(corrupt(&waves[i], &spec, &ctx)?);
        let streams = extractor.extract(&w)?;
        Ok(model.predict_one(&streams)?.mos)
    };

    let mut curves = Vec::with_capacity(kinds.len());
    for (ki, &kind) in kinds.iter().enumerate() {
        let jobs: Vec<(u8, usize)> = levels
            .iter()
            .flat_map(|&l| (0..records.len()).map(move |i| (l, i)))
            .collect();
        let preds: Vec<Result<f64>> = jobs.par_iter().map(|&(l, i)| predict(ki, kind, l, i)).collect();
        let params = levels.iter().map(|&l| kind.param(l)).collect::<Result<Vec<_>>>()?;
        if let Some(reason) = preds.iter().find_map(|p| match p {
            Err(Error::Unavailable(m)) => Some(m.clone()),
            _ => None,
        }) {
            curves.push(SensitivityCurve {
                kind,
                levels: levels.clone(),
                params,
                rmse: vec![],
                relative: vec![],
                available: false,
                note: Some(reason),
            });
            continue;
        }
        let preds = preds.into_iter().collect::<Result<Vec<f64>>>()?;
        let rmse: Vec<f64> = preds
            .chunks(records.len())
            .map(|p| {
                let sse: f64 = p.iter().zip(records).map(|(y, r)| (y - r.mos).powi(2)).sum();
                (sse / records.len() as f64).sqrt()
            })
            .collect();
        let relative = rmse.iter().map(|&r| ratio(rmse[0], r)).collect();
        curves.push(SensitivityCurve {
            kind,
            levels: levels.clone(),
            params,
            rmse,
            relative,
            available: true,
            note: None,
        });
    }
    Ok(curves)
}

/// Delimited curve table (kind, level, param, rmse, relative).
pub fn curves_to_tsv(curves: &[SensitivityCurve]) -> String {
    let mut out = String::from("kind\tlevel\tparam\tunit\trmse\trelative\n");
    for c in curves {
        for (i, (&l, p)) in c.levels.iter().zip(&c.params).enumerate() {
            let p = p.map_or("none".to_string(), |v| v.to_string());
            let (r, rel) = if c.available {
                (c.rmse[i].to_string(), c.relative[i].to_string())
            } else {
                ("unavailable".into(), "unavailable".into())
            };
            let _ = writeln!(out, "{}\t{l}\t{p}\t{}\t{r}\t{rel}", c.kind.name(), c.kind.unit());
        }
    }
    out
}

pub fn write_curves(curves: &[SensitivityCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, curves_to_tsv(curves)).map_err(|e| Error::io(path, e))
}
