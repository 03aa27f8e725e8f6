//! Deterministic synthetic three-source scene for desk-scale training:
//! a harmonic sine sweep ("music"), gated glottal-pulse syllables
//! ("speech") and band-limited noise bursts ("effects"), each leveled to
//! its default class loudness.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use stemkit_core::dsp::{db_to_gain, integrated_lufs_samples};

use crate::error::Result;

pub const MUSIC_LUFS: f64 = -24.0;
pub const SPEECH_LUFS: f64 = -17.0;
pub const SFX_LUFS: f64 = -21.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub mixture: Vec<f64>,
    /// Music, speech, effects.
    pub sources: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

fn music(len: usize, rate: f64) -> Vec<f64> {
    let dur = len as f64 / rate;
    let (f0, f1) = (180.0, 720.0);
    let k = (f1 / f0 as f64).ln() / dur;
    (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            // phase of an exponential sweep
            let phase = 2.0 * PI * f0 * ((k * t).exp() - 1.0) / k;
            (1..=4).map(|h| (h as f64 * phase).sin() / h as f64).sum::<f64>() * (0.8 + 0.2 * (2.0 * PI * 0.5 * t).sin())
        })
        .collect()
}

fn speech(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut n = (0.1 * rate) as usize;
    while n < len {
        let syl = (rng.random_range(0.15..0.35) * rate) as usize;
        let gap = (rng.random_range(0.08..0.4) * rate) as usize;
        let f0 = rng.random_range(100.0..160.0);
        let formant = rng.random_range(500.0..1500.0);
        let mut phase = 0.0;
        let mut state = [0.0; 2];
        let r: f64 = 0.97;
        let theta = 2.0 * PI * formant / rate;
        for t in 0..syl.min(len - n) {
            let env = (PI * t as f64 / syl as f64).sin();
            phase += f0 * (1.0 + 0.1 * (t as f64 / syl as f64)) / rate;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            // two-pole resonator at the formant
            let y = pulse + 2.0 * r * theta.cos() * state[0] - r * r * state[1];
            state[1] = state[0];
            state[0] = y;
            out[n + t] = env * y;
        }
        n += syl + gap;
    }
    out
}

fn sfx(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut n = (rng.random_range(0.0..0.5) * rate) as usize;
    while n < len {
        let burst = (rng.random_range(0.3..1.2) * rate) as usize;
        let centre = rng.random_range(1800.0..3000.0f64).min(0.4 * rate);
        let (b, a) = bandpass(centre, 2.0, rate);
        let mut x = [0.0; 2];
        let mut y = [0.0; 2];
        for t in 0..burst.min(len - n) {
            let env = (PI * t as f64 / burst as f64).sin().sqrt();
            let v: f64 = rng.random_range(-1.0..1.0);
            let o = b[0] * v + b[1] * x[0] + b[2] * x[1] - a[0] * y[0] - a[1] * y[1];
            x = [v, x[0]];
            y = [o, y[0]];
            out[n + t] = env * o;
        }
        n += burst + (rng.random_range(0.2..0.8) * rate) as usize;
    }
    out
}

/// RBJ band-pass with 0 dB peak gain.
fn bandpass(freq: f64, q: f64, rate: f64) -> ([f64; 3], [f64; 2]) {
    let w = 2.0 * PI * freq / rate;
    let alpha = w.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    ([alpha / a0, 0.0, -alpha / a0], [-2.0 * w.cos() / a0, (1.0 - alpha) / a0])
}

fn level(x: &mut [f64], rate: u32, target: f64) -> Result<()> {
    if let Some(l) = integrated_lufs_samples(x, rate)?.lufs() {
        let g = db_to_gain(target - l);
        x.iter_mut().for_each(|v| *v *= g);
    }
    Ok(())
}

/// A `duration_s` scene at `sample_rate`; identical for identical inputs.
pub fn scene(duration_s: f64, sample_rate: u32, seed: u64) -> Result<ToyScene> {
    let rate = sample_rate as f64;
    let len = (duration_s * rate).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sources = vec![music(len, rate), speech(len, rate, &mut rng), sfx(len, rate, &mut rng)];
    for (s, target) in sources.iter_mut().zip([MUSIC_LUFS, SPEECH_LUFS, SFX_LUFS]) {
        level(s, sample_rate, target)?;
        // keep stems exactly representable in 32-bit files
        s.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    let mixture = (0..len).map(|n| sources.iter().map(|s| s[n]).sum()).collect();
    Ok(ToyScene {
        mixture,
        sources,
        sample_rate,
    })
}
