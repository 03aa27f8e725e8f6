//! STFT/iSTFT, window quantization, integrated loudness and gain utilities.
//!
//! All arithmetic is done in `f64`. STFT frames use a periodic sqrt-Hann
//! window for both analysis and synthesis, with the input center-padded by
//! half a window on both ends so that every resolution sharing a hop yields
//! the same number of frames: `N = 1 + len / hop`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Nearest power of two to `window_ms * sample_rate / 1000`; exact midpoints
/// round up.
pub fn quantize_window(window_ms: f64, sample_rate: u32) -> usize {
    assert!(window_ms > 0.0, "window length must be positive");
    let target = window_ms * sample_rate as f64 / 1000.0;
    if target <= 1.0 {
        return 1;
    }
    let lower = 1usize << (target.log2().floor() as u32);
    let upper = lower * 2;
    if (upper as f64 - target) <= (target - lower as f64) {
        upper
    } else {
        lower
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub window_ms: f64,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub sample_rate: u32,
}

impl StftConfig {
    /// Quantizes `window_ms` to a power of two and uses the given hop.
    pub fn new(window_ms: f64, hop_samples: usize, sample_rate: u32) -> Result<Self> {
        if !(window_ms > 0.0) {
            return Err(Error::validation("window_ms", "must be positive"));
        }
        let window_samples = quantize_window(window_ms, sample_rate);
        Self::from_samples(window_ms, window_samples, hop_samples, sample_rate)
    }

    /// Window in ms with hop set to a quarter of the quantized window.
    pub fn quarter_hop(window_ms: f64, sample_rate: u32) -> Result<Self> {
        let window_samples = quantize_window(window_ms, sample_rate);
        Self::from_samples(window_ms, window_samples, (window_samples / 4).max(1), sample_rate)
    }

    pub fn from_samples(window_ms: f64, window_samples: usize, hop_samples: usize, sample_rate: u32) -> Result<Self> {
        if window_samples < 2 || !window_samples.is_power_of_two() {
            return Err(Error::validation("window_samples", "must be a power of two >= 2"));
        }
        if hop_samples == 0 || hop_samples > window_samples || window_samples % hop_samples != 0 {
            return Err(Error::validation(
                "hop_samples",
                format!("hop {hop_samples} must divide window {window_samples}"),
            ));
        }
        Ok(Self {
            window_ms,
            window_samples,
            hop_samples,
            sample_rate,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.window_samples / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        1 + len / self.hop_samples
    }
}

/// Periodic sqrt-Hann window.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| (0.5 * (1.0 - (2.0 * PI * k as f64 / len as f64).cos())).sqrt())
        .collect()
}

/// One-sided complex STFT, stored frame-major: `bins[n * F + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Complex64>,
    pub num_frames: usize,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(num_frames: usize, config: StftConfig) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); num_frames * config.num_bins()],
            num_frames,
            config,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn frame(&self, n: usize) -> &[Complex64] {
        let f = self.num_bins();
        &self.bins[n * f..(n + 1) * f]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    /// Element-wise product with a real mask of the same shape.
    pub fn masked(&self, mask: &[f64]) -> Spectrogram {
        assert_eq!(mask.len(), self.bins.len(), "mask shape mismatch");
        Spectrogram {
            bins: self.bins.iter().zip(mask).map(|(c, &m)| c * m).collect(),
            num_frames: self.num_frames,
            config: self.config.clone(),
        }
    }
}

pub fn stft(samples: &[f64], config: &StftConfig) -> Result<Spectrogram> {
    if samples.is_empty() {
        return Err(Error::TooShort("cannot take the STFT of an empty signal".into()));
    }
    let win = config.window_samples;
    let hop = config.hop_samples;
    let half = win / 2;
    let num_frames = config.num_frames(samples.len());
    let num_bins = config.num_bins();
    let window = sqrt_hann(win);
    let fft = forward_fft(win);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    let mut bins = Vec::with_capacity(num_frames * num_bins);
    for n in 0..num_frames {
        let start = (n * hop) as isize - half as isize;
        for (k, slot) in buf.iter_mut().enumerate() {
            let t = start + k as isize;
            let x = if t >= 0 && (t as usize) < samples.len() {
                samples[t as usize]
            } else {
                0.0
            };
            *slot = Complex64::new(x * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        bins.extend_from_slice(&buf[..num_bins]);
    }
    Ok(Spectrogram {
        bins,
        num_frames,
        config: config.clone(),
    })
}

pub fn stft_buffer(buffer: &AudioBuffer, config: &StftConfig) -> Result<Spectrogram> {
    stft(&buffer.to_f64(), config)
}

/// Sum of squared synthesis windows at each padded position.
fn window_overlap(window: &[f64], hop: usize, num_frames: usize) -> Vec<f64> {
    let win = window.len();
    let mut norm = vec![0.0; (num_frames - 1) * hop + win];
    for n in 0..num_frames {
        for (k, w) in window.iter().enumerate() {
            norm[n * hop + k] += w * w;
        }
    }
    norm
}

/// Inverse STFT by weighted overlap-add, normalized by the summed squared
/// window, then cropped (or zero-padded) to `length` samples.
pub fn istft(spec: &Spectrogram, length: usize) -> Vec<f64> {
    let win = spec.config.window_samples;
    let hop = spec.config.hop_samples;
    let half = win / 2;
    let num_bins = spec.num_bins();
    if spec.num_frames == 0 {
        return vec![0.0; length];
    }
    let window = sqrt_hann(win);
    let ifft = inverse_fft(win);
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    let norm = window_overlap(&window, hop, spec.num_frames);
    let mut acc = vec![0.0; norm.len()];
    let scale = 1.0 / win as f64;
    for n in 0..spec.num_frames {
        let frame = spec.frame(n);
        buf[..num_bins].copy_from_slice(frame);
        for f in 1..num_bins - 1 {
            buf[win - f] = frame[f].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let base = n * hop;
        for k in 0..win {
            acc[base + k] += buf[k].re * scale * window[k];
        }
    }
    (0..length)
        .map(|t| {
            let p = t + half;
            if p < acc.len() && norm[p] > 1e-10 {
                acc[p] / norm[p]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn istft_buffer(spec: &Spectrogram, length: usize) -> Result<AudioBuffer> {
    AudioBuffer::from_f64(&istft(spec, length), spec.config.sample_rate)
}

/// Adjoint of [`istft`] viewed as a real-linear map from (Re, Im) of every
/// bin to the output samples. Given `dL/dy` it returns, per bin, a complex
/// number whose real part is `dL/dRe` and imaginary part is `dL/dIm`.
pub fn istft_adjoint(grad: &[f64], config: &StftConfig, num_frames: usize) -> Vec<Complex64> {
    let win = config.window_samples;
    let hop = config.hop_samples;
    let half = win / 2;
    let num_bins = config.num_bins();
    let window = sqrt_hann(win);
    let norm = window_overlap(&window, hop, num_frames);
    let mut gpad = vec![0.0; norm.len()];
    for (t, &g) in grad.iter().enumerate() {
        let p = t + half;
        if p < gpad.len() && norm[p] > 1e-10 {
            gpad[p] = g / norm[p];
        }
    }
    let fft = forward_fft(win);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    let mut out = Vec::with_capacity(num_frames * num_bins);
    let edge = 1.0 / win as f64;
    let inner = 2.0 / win as f64;
    for n in 0..num_frames {
        let base = n * hop;
        for k in 0..win {
            buf[k] = Complex64::new(gpad[base + k] * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for f in 0..num_bins {
            let g = buf[f];
            if f == 0 || f == num_bins - 1 {
                out.push(Complex64::new(g.re * edge, 0.0));
            } else {
                out.push(g * inner);
            }
        }
    }
    out
}

/// STFTs at several window lengths sharing one hop, hence one frame count.
#[derive(Debug, Clone)]
pub struct MultiResSpectrogram {
    pub resolutions: Vec<Spectrogram>,
}

impl MultiResSpectrogram {
    pub fn analyze(samples: &[f64], configs: &[StftConfig]) -> Result<Self> {
        let resolutions = configs
            .iter()
            .map(|c| stft(samples, c))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = resolutions.first() {
            if resolutions.iter().any(|s| s.num_frames != first.num_frames) {
                return Err(Error::validation("hop_samples", "resolutions do not share a hop"));
            }
        }
        Ok(Self { resolutions })
    }

    pub fn num_frames(&self) -> usize {
        self.resolutions.first().map_or(0, |s| s.num_frames)
    }
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn apply_gain_db(buffer: &AudioBuffer, gain_db: f64) -> AudioBuffer {
    let g = db_to_gain(gain_db);
    let samples = buffer.samples().iter().map(|&s| (s as f64 * g) as f32).collect();
    AudioBuffer::new(samples, buffer.sample_rate()).expect("finite gain keeps samples finite")
}

/// Second-order IIR section, `a0 = 1`.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    // K-weighting stage 1: high shelf, redesigned for the given rate.
    fn k_shelf(rate: f64) -> Self {
        let gain_db = 3.999_843_853_973_347;
        let q = 0.707_175_236_955_419_3;
        let fc = 1_681.974_450_955_531_9;
        let k = (PI * fc / rate).tan();
        let vh = 10f64.powf(gain_db / 20.0);
        let vb = vh.powf(0.499_666_774_154_541_6);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: (vh + vb * k / q + k * k) / a0,
            b1: 2.0 * (k * k - vh) / a0,
            b2: (vh - vb * k / q + k * k) / a0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    // K-weighting stage 2: RLB high-pass.
    fn k_highpass(rate: f64) -> Self {
        let q = 0.500_327_037_325_395_3;
        let fc = 38.135_470_876_139_82;
        let k = (PI * fc / rate).tan();
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: 1.0,
            b1: -2.0,
            b2: 1.0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    fn run(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x0| {
                let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Applies the two-stage K-weighting filter.
pub fn k_weight(samples: &[f64], sample_rate: u32) -> Vec<f64> {
    let rate = sample_rate as f64;
    Biquad::k_highpass(rate).run(&Biquad::k_shelf(rate).run(samples))
}

/// Result of an integrated loudness measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loudness {
    Lufs(f64),
    /// Every block fell below the absolute gate (e.g. digital silence).
    Unmeasurable,
}

impl Loudness {
    pub fn lufs(self) -> Option<f64> {
        match self {
            Loudness::Lufs(v) => Some(v),
            Loudness::Unmeasurable => None,
        }
    }
}

const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;

fn power_to_lufs(z: f64) -> f64 {
    -0.691 + 10.0 * z.log10()
}

/// Mono integrated loudness: 400 ms blocks with 75% overlap, absolute gate
/// at -70 LUFS, relative gate 10 LU below the absolute-gated level.
pub fn integrated_lufs_samples(samples: &[f64], sample_rate: u32) -> Result<Loudness> {
    let step = (sample_rate as f64 * 0.1).round() as usize;
    let block = 4 * step;
    if samples.len() < block {
        return Err(Error::TooShort(format!(
            "{} samples is shorter than one 400 ms loudness block ({block})",
            samples.len()
        )));
    }
    let weighted = k_weight(samples, sample_rate);
    let num_blocks = (samples.len() - block) / step + 1;
    let powers: Vec<f64> = (0..num_blocks)
        .map(|j| {
            let s = &weighted[j * step..j * step + block];
            s.iter().map(|v| v * v).sum::<f64>() / block as f64
        })
        .collect();
    let above_abs: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&z| z > 0.0 && power_to_lufs(z) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_abs.is_empty() {
        return Ok(Loudness::Unmeasurable);
    }
    let mean_abs = above_abs.iter().sum::<f64>() / above_abs.len() as f64;
    let relative_gate = power_to_lufs(mean_abs) + RELATIVE_GATE_LU;
    let gated: Vec<f64> = above_abs
        .into_iter()
        .filter(|&z| power_to_lufs(z) > relative_gate)
        .collect();
    let mean = gated.iter().sum::<f64>() / gated.len() as f64;
    Ok(Loudness::Lufs(power_to_lufs(mean)))
}

pub fn integrated_lufs(buffer: &AudioBuffer) -> Result<Loudness> {
    integrated_lufs_samples(&buffer.to_f64(), buffer.sample_rate())
}

pub const DEFAULT_SILENCE_DB: f64 = -60.0;

/// Sample range `[start, end)` between the first and last 10 ms frame whose
/// RMS reaches `threshold_db`; `None` when every frame is below it.
pub fn non_silent_bounds(buffer: &AudioBuffer, threshold_db: f64) -> Option<(usize, usize)> {
    let frame = ((buffer.sample_rate() as f64 * 0.01).round() as usize).max(1);
    let loud = |chunk: &[f32]| {
        let ms = chunk.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / chunk.len() as f64;
        ms > 0.0 && 10.0 * ms.log10() >= threshold_db
    };
    let chunks: Vec<&[f32]> = buffer.samples().chunks(frame).collect();
    let first = chunks.iter().position(|c| loud(c))?;
    let last = chunks.iter().rposition(|c| loud(c))?;
    let end = ((last + 1) * frame).min(buffer.len());
    Some((first * frame, end))
}

/// Removes leading and trailing 10 ms frames whose RMS is below
/// `threshold_db` (dBFS). A fully silent input yields an empty buffer.
pub fn trim_silence(buffer: &AudioBuffer, threshold_db: f64) -> AudioBuffer {
    match non_silent_bounds(buffer, threshold_db) {
        Some((start, end)) => buffer.excerpt(start, end - start),
        None => buffer.excerpt(0, 0),
    }
}

pub fn rms_db(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ms = samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
    10.0 * ms.log10()
}
