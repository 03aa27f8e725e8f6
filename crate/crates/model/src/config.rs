use serde::{Deserialize, Serialize};
use stemkit_core::dsp::{quantize_window, StftConfig};

use crate::error::{config_err, Result};

/// Architecture and framing of a multi-resolution mask network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrxConfig {
    /// Analysis windows in milliseconds, one encoder/decoder pair each.
    pub window_ms: Vec<f64>,
    pub sample_rate: u32,
    /// Width of the encoder output and decoder hidden layer.
    pub hidden: usize,
    /// Units per LSTM direction.
    pub lstm_hidden: usize,
    #[serde(default = "default_three")]
    pub lstm_layers: usize,
    #[serde(default = "default_three")]
    pub num_stacks: usize,
    #[serde(default = "default_three")]
    pub num_sources: usize,
    /// Training chunk and inference window length in seconds.
    pub chunk_s: f64,
}

fn default_three() -> usize {
    3
}

impl Default for MrxConfig {
    fn default() -> Self {
        Self {
            window_ms: vec![32.0, 64.0, 256.0],
            sample_rate: 44100,
            hidden: 512,
            lstm_hidden: 256,
            lstm_layers: 3,
            num_stacks: 3,
            num_sources: 3,
            chunk_s: 9.0,
        }
    }
}

impl MrxConfig {
    /// Desk-scale network: 8 kHz, two resolutions, narrow layers.
    pub fn toy() -> Self {
        Self {
            window_ms: vec![32.0, 64.0],
            sample_rate: 8000,
            hidden: 64,
            lstm_hidden: 32,
            ..Self::default()
        }
    }

    pub fn with_sample_rate(mut self, rate: u32) -> Self {
        self.sample_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        stemkit_core::audio::check_sample_rate(self.sample_rate).map_err(|e| config_err("sample_rate", e.to_string()))?;
        if self.window_ms.is_empty() {
            return Err(config_err("window_ms", "at least one resolution is required"));
        }
        if self.window_ms.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(config_err("window_ms", "windows must be positive"));
        }
        if self.window_samples().iter().min().copied().unwrap_or(0) < 4 {
            return Err(config_err("window_ms", "shortest window must span at least 4 samples"));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("num_stacks", self.num_stacks),
            ("num_sources", self.num_sources),
        ] {
            if v == 0 {
                return Err(config_err(name, "must be positive"));
            }
        }
        if !(self.chunk_s.is_finite() && self.chunk_s > 0.0) {
            return Err(config_err("chunk_s", "must be positive"));
        }
        if self.chunk_samples() < self.hop_samples() {
            return Err(config_err("chunk_s", "chunk is shorter than one hop"));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> Vec<usize> {
        self.window_ms.iter().map(|&w| quantize_window(w, self.sample_rate)).collect()
    }

    /// A quarter of the shortest quantized window; divides every window
    /// because all windows are powers of two.
    pub fn hop_samples(&self) -> usize {
        (self.window_samples().into_iter().min().unwrap_or(4) / 4).max(1)
    }

    pub fn stft_configs(&self) -> Result<Vec<StftConfig>> {
        let hop = self.hop_samples();
        self.window_ms
            .iter()
            .zip(self.window_samples())
            .map(|(&ms, w)| Ok(StftConfig::from_samples(ms, w, hop, self.sample_rate)?))
            .collect()
    }

    /// Frequency bins per resolution.
    pub fn num_bins(&self) -> Vec<usize> {
        self.window_samples().iter().map(|w| w / 2 + 1).collect()
    }

    pub fn num_frames(&self, len: usize) -> usize {
        1 + len / self.hop_samples()
    }

    pub fn chunk_samples(&self) -> usize {
        (self.chunk_s * self.sample_rate as f64).round() as usize
    }

    pub fn num_resolutions(&self) -> usize {
        self.window_ms.len()
    }
}
