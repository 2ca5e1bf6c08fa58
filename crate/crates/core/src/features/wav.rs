use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Read a 16-bit PCM or 32-bit float WAV, mix to mono by channel mean and
/// resample to 16 kHz.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Validation(format!("{}: no audio samples", path.display())));
    }
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    let wave = Waveform::new(mono, spec.sample_rate)?;
    if wave.sample_rate == SAMPLE_RATE {
        Ok(wave)
    } else {
        resample(&wave, SAMPLE_RATE)
    }
}

/// Write a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wave.samples {
        writer.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, channels: u16, rate: u32, data: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let data: Vec<i16> = vec![0, 1, -1, 32767, -32768, 1234];
        write_pcm16(&p, 1, 16000, &data);
        let w = read_wav(&p).unwrap();
        let want: Vec<f64> = data.iter().map(|&v| v as f64 / 32768.0).collect();
        assert_eq!(w.samples, want);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn identical_stereo_channels_match_mono() {
        let dir = tempfile::tempdir().unwrap();
        let mono: Vec<i16> = (0..400).map(|i| ((i * 97) % 2000 - 1000) as i16).collect();
        let stereo: Vec<i16> = mono.iter().flat_map(|&s| [s, s]).collect();
        write_pcm16(&dir.path().join("m.wav"), 1, 16000, &mono);
        write_pcm16(&dir.path().join("s.wav"), 2, 16000, &stereo);
        let a = read_wav(dir.path().join("m.wav")).unwrap();
        let b = read_wav(dir.path().join("s.wav")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_wav_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_pcm16(&p, 1, 16000, &[]);
        assert_eq!(read_wav(&p).unwrap_err().category(), "validation");
    }

    #[test]
    fn unsupported_bit_depth_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap_err().category(), "format");
    }

    #[test]
    fn float_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let wave = Waveform::new(vec![0.5, -0.25, 0.125], 16000).unwrap();
        write_wav(&p, &wave).unwrap();
        assert_eq!(read_wav(&p).unwrap(), wave);
    }
}
