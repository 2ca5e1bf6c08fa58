use super::Waveform;
use crate::error::{Error, Result};

// Zero crossings of the windowed-sinc kernel on each side, at the kernel's cutoff.
const ZERO_CROSSINGS: f64 = 24.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let a = std::f64::consts::PI * u;
        0.42 + 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
    }
}

/// Rational polyphase resampler with a Blackman-windowed sinc kernel.
///
/// Output sample `n` sits at input position `n·M/L`; its fractional part
/// takes only `L` values, so one kernel per phase is precomputed. The kernel
/// cutoff is the lower of the two Nyquist rates.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 || wave.sample_rate == 0 {
        return Err(Error::Validation("sample rates must be positive".into()));
    }
    if wave.sample_rate == target_rate {
        return Ok(wave.clone());
    }
    let g = gcd(wave.sample_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = wave.sample_rate as u64 / g;
    let cutoff = (up as f64 / down as f64).min(1.0);
    let half = ZERO_CROSSINGS / cutoff;
    let reach = half.ceil() as i64;

    let kernels: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            let mut taps: Vec<f64> = (-reach + 1..=reach)
                .map(|k| {
                    let t = k as f64 - frac;
                    cutoff * sinc(cutoff * t) * blackman(t / half)
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|v| *v /= sum);
            taps
        })
        .collect();

    let n_in = wave.samples.len() as i64;
    let n_out = (wave.samples.len() as u64 * up).div_ceil(down) as usize;
    let x = &wave.samples;
    let out: Vec<f64> = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &kernels[(pos % up) as usize];
            taps.iter()
                .enumerate()
                .filter_map(|(j, &h)| {
                    let idx = base + j as i64 - reach + 1;
                    (0..n_in).contains(&idx).then(|| h * x[idx as usize])
                })
                .sum()
        })
        .collect();
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn dominant_bin(x: &[f64]) -> usize {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        (1..buf.len() / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap()
    }

    #[test]
    fn upsampled_tone_keeps_its_frequency() {
        let sr = 8000;
        let x: Vec<f64> = (0..sr)
            .map(|n| 0.5 * (std::f64::consts::TAU * 440.0 * n as f64 / sr as f64).sin())
            .collect();
        let w = resample(&Waveform::new(x, sr as u32).unwrap(), 16000).unwrap();
        assert_eq!(w.samples.len(), 16000);
        // 16000-point FFT at 16 kHz: 1 Hz per bin.
        let bin = dominant_bin(&w.samples) as i64;
        assert!((bin - 440).abs() <= 1, "bin {bin}");
    }

    #[test]
    fn downsampled_tone_keeps_its_frequency() {
        let sr = 44100;
        let x: Vec<f64> = (0..sr)
            .map(|n| (std::f64::consts::TAU * 1000.0 * n as f64 / sr as f64).sin())
            .collect();
        let w = resample(&Waveform::new(x, sr as u32).unwrap(), 16000).unwrap();
        assert_eq!(w.samples.len(), 16000);
        let bin = dominant_bin(&w.samples) as i64;
        assert!((bin - 1000).abs() <= 1, "bin {bin}");
    }

    #[test]
    fn constant_signal_keeps_its_level_away_from_edges() {
        let w = resample(&Waveform::new(vec![0.25; 4000], 8000).unwrap(), 16000).unwrap();
        for &v in &w.samples[200..7800] {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }
}
