//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::audio::{check_sample_rate, AudioBuffer};
use crate::error::Result;

const KAISER_BETA: f64 = 8.6;
/// Taps per phase, counted at the lower of the two rates.
const TAPS_PER_PHASE: usize = 64;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.9;
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

struct Kernel {
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    /// Taps on each side of the interpolation point, in input samples.
    half: usize,
    norm_i0: f64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        let stretch = (down as f64 / up as f64).max(1.0);
        Kernel {
            cutoff: 0.5 * ROLLOFF / stretch,
            half: ((TAPS_PER_PHASE / 2) as f64 * stretch).ceil() as usize,
            norm_i0: bessel_i0(KAISER_BETA),
        }
    }

    /// Coefficients for input offsets `1 - half ..= half` relative to the
    /// floor of the interpolation point, normalized to unit DC gain.
    fn phase(&self, frac: f64) -> Vec<f64> {
        let half = self.half as isize;
        let span = self.half as f64;
        let mut taps: Vec<f64> = (1 - half..=half)
            .map(|j| {
                let d = j as f64 - frac;
                let r = d / span;
                if r.abs() >= 1.0 {
                    return 0.0;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.norm_i0;
                2.0 * self.cutoff * sinc(2.0 * self.cutoff * d) * window
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        if sum.abs() > 1e-12 {
            taps.iter_mut().for_each(|t| *t /= sum);
        }
        taps
    }
}

/// Resamples `samples` from `source_rate` to `target_rate`. The output has
/// `round(len * target / source)` samples and no group delay.
pub fn resample_samples(samples: &[f64], source_rate: u32, target_rate: u32) -> Vec<f64> {
    if source_rate == target_rate {
        return samples.to_vec();
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let out_len = ((samples.len() as u128 * target_rate as u128 + source_rate as u128 / 2)
        / source_rate as u128) as usize;
    let kernel = Kernel::new(up, down);
    let table: Option<Vec<Vec<f64>>> = (up as usize <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.phase(p as f64 / up as f64)).collect());
    let half = kernel.half as isize;
    let len = samples.len() as isize;
    (0..out_len as u64)
        .map(|m| {
            let num = m * down;
            let base = (num / up) as isize;
            let phase = num % up;
            let computed;
            let taps = match &table {
                Some(t) => &t[phase as usize],
                None => {
                    computed = kernel.phase(phase as f64 / up as f64);
                    &computed
                }
            };
            let mut acc = 0.0;
            for (i, &c) in taps.iter().enumerate() {
                let idx = base + 1 - half + i as isize;
                if idx >= 0 && idx < len {
                    acc += c * samples[idx as usize];
                }
            }
            acc
        })
        .collect()
}

pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    check_sample_rate(target_rate)?;
    if target_rate == buffer.sample_rate() {
        return Ok(buffer.clone());
    }
    AudioBuffer::from_f64(
        &resample_samples(&buffer.to_f64(), buffer.sample_rate(), target_rate),
        target_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    fn snr_db(reference: &[f64], test: &[f64]) -> f64 {
        let sig: f64 = reference.iter().map(|v| v * v).sum();
        let err: f64 = reference.iter().zip(test).map(|(a, b)| (a - b).powi(2)).sum();
        10.0 * (sig / err).log10()
    }

    #[test]
    fn identity_rate_is_clone() {
        let b = AudioBuffer::new(vec![0.1, 0.2, 0.3], 16000).unwrap();
        assert_eq!(resample(&b, 16000).unwrap(), b);
    }

    #[test]
    fn output_length_rounds() {
        let out = resample_samples(&vec![0.0; 44101], 44100, 16000);
        assert_eq!(out.len(), 16000);
        assert_eq!(resample_samples(&vec![0.0; 3], 16000, 44100).len(), 8);
    }

    #[test]
    fn downsampled_sine_matches_analytic() {
        let x = sine(1000.0, 44100, 44100 * 2);
        let y = resample_samples(&x, 44100, 16000);
        let expect = sine(1000.0, 16000, y.len());
        let trim = 1000;
        let snr = snr_db(&expect[trim..y.len() - trim], &y[trim..y.len() - trim]);
        assert!(snr > 60.0, "snr {snr}");
    }

    #[test]
    fn above_nyquist_is_removed() {
        let x = sine(10_000.0, 44100, 44100);
        let y = resample_samples(&x, 44100, 16000);
        let ms = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!(10.0 * ms.log10() < -40.0, "{}", 10.0 * ms.log10());
    }

    #[test]
    fn round_trip_passband() {
        let x: Vec<f64> = sine(440.0, 16000, 32000)
            .iter()
            .zip(sine(2500.0, 16000, 32000))
            .map(|(a, b)| 0.5 * a + 0.3 * b)
            .collect();
        let up = resample_samples(&x, 16000, 44100);
        let back = resample_samples(&up, 44100, 16000);
        assert_eq!(back.len(), x.len());
        let trim = 500;
        let snr = snr_db(&x[trim..x.len() - trim], &back[trim..x.len() - trim]);
        assert!(snr > 40.0, "snr {snr}");
    }

    #[test]
    fn invalid_target_rate() {
        let b = AudioBuffer::new(vec![0.0; 10], 16000).unwrap();
        assert!(resample(&b, 1000).is_err());
    }
}
