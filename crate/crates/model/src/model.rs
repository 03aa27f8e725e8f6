use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stemkit_core::dsp::{MultiResSpectrogram, Spectrogram, StftConfig};
use stemkit_neural::checkpoint::Checkpoint;
use stemkit_neural::{BatchNorm, BiLstm, ForwardCtx, Linear, ParamStore, Tape, Tensor, Var};

use crate::config::MrxConfig;
use crate::error::{ModelError, Result};
use crate::recon::{loss_op, reconstruct, reconstruct_op};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Encoder {
    fc: Linear,
    bn: BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    /// Output rows are grouped by source: rows `j·F..(j+1)·F` mask source `j`.
    pub fc2: Linear,
    pub bn2: BatchNorm,
}

/// Multi-resolution mask network: one encoder and decoder per STFT
/// resolution around averaged bidirectional LSTM stacks.
#[derive(Debug, Clone)]
pub struct MrxModel {
    config: MrxConfig,
    stft: Vec<StftConfig>,
    store: ParamStore,
    encoders: Vec<Encoder>,
    stacks: Vec<Vec<BiLstm>>,
    decoders: Vec<Decoder>,
}

/// Output of one forward pass over a batch of equal-length chunks.
pub struct Forward {
    /// `[B·S × length]` time-domain estimates, row `b·S + j`.
    pub estimates: Var,
    /// Per resolution, `[B·N × S·F_i]` masks.
    pub masks: Vec<Var>,
}

impl MrxModel {
    /// Builds a freshly initialized network; parameters are drawn from a
    /// ChaCha20 stream seeded with `seed`.
    pub fn new(config: MrxConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stft = config.stft_configs()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.set_f32_exact(true);
        let bins = config.num_bins();
        let (h, l) = (config.hidden, config.lstm_hidden);
        let encoders = bins
            .iter()
            .enumerate()
            .map(|(i, &f)| Encoder {
                fc: Linear::new(&mut store, &format!("enc{i}.fc"), f, h, &mut rng),
                bn: BatchNorm::new(&mut store, &format!("enc{i}.bn"), h),
            })
            .collect();
        let stacks = (0..config.num_stacks)
            .map(|s| {
                (0..config.lstm_layers)
                    .map(|k| {
                        let input = if k == 0 { h } else { 2 * l };
                        BiLstm::new(&mut store, &format!("lstm{s}.{k}"), input, l, &mut rng)
                    })
                    .collect()
            })
            .collect();
        let s = config.num_sources;
        let decoders = bins
            .iter()
            .enumerate()
            .map(|(i, &f)| Decoder {
                fc1: Linear::new(&mut store, &format!("dec{i}.fc1"), h + 2 * l, h, &mut rng),
                bn1: BatchNorm::new(&mut store, &format!("dec{i}.bn1"), h),
                fc2: Linear::new(&mut store, &format!("dec{i}.fc2"), h, s * f, &mut rng),
                bn2: BatchNorm::new(&mut store, &format!("dec{i}.bn2"), s * f),
            })
            .collect();
        Ok(Self {
            config,
            stft,
            store,
            encoders,
            stacks,
            decoders,
        })
    }

    pub fn config(&self) -> &MrxConfig {
        &self.config
    }

    pub fn stft_configs(&self) -> &[StftConfig] {
        &self.stft
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn decoders(&self) -> &[Decoder] {
        &self.decoders
    }

    pub fn analyze(&self, mixture: &[f64]) -> Result<MultiResSpectrogram> {
        Ok(MultiResSpectrogram::analyze(mixture, &self.stft)?)
    }

    /// Encoder stage: per-resolution FC, BN and tanh on magnitudes, averaged
    /// over resolutions. Returns `[B·N × hidden]`.
    pub fn encode(&self, tape: &mut Tape, ctx: &mut ForwardCtx, specs: &[MultiResSpectrogram]) -> Result<Var> {
        let mut branches = Vec::with_capacity(self.encoders.len());
        for (i, enc) in self.encoders.iter().enumerate() {
            let f = self.stft[i].num_bins();
            let mut mags = Vec::new();
            let mut rows = 0;
            for s in specs {
                let r = &s.resolutions[i];
                mags.extend(r.bins.iter().map(|c| c.norm()));
                rows += r.num_frames;
            }
            let x = tape.leaf(Tensor::new(&[rows, f], mags)?);
            let y = enc.fc.forward(tape, &self.store, x)?;
            let y = enc.bn.forward(tape, &self.store, ctx, y)?;
            branches.push(tape.tanh(y));
        }
        Ok(tape.mean_over(&branches)?)
    }

    /// BLSTM stacks and decoders. `features` is `[B·N × hidden]`; returns
    /// one nonnegative `[B·N × S·F_i]` mask tensor per resolution.
    pub fn separate_masks(
        &self,
        tape: &mut Tape,
        ctx: &mut ForwardCtx,
        features: Var,
        batch: usize,
        frames: usize,
    ) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            let mut x = features;
            for layer in stack {
                x = layer.forward(tape, &self.store, x, batch, frames)?;
            }
            outs.push(x);
        }
        let avg = tape.mean_over(&outs)?;
        let joined = tape.concat(&[features, avg], 1)?;
        let mut masks = Vec::with_capacity(self.decoders.len());
        for dec in &self.decoders {
            let y = dec.fc1.forward(tape, &self.store, joined)?;
            let y = dec.bn1.forward(tape, &self.store, ctx, y)?;
            let y = tape.relu(y);
            let y = dec.fc2.forward(tape, &self.store, y)?;
            let y = dec.bn2.forward(tape, &self.store, ctx, y)?;
            masks.push(tape.relu(y));
        }
        Ok(masks)
    }

    /// Full forward pass over equal-length chunks.
    pub fn forward(&self, tape: &mut Tape, ctx: &mut ForwardCtx, chunks: &[&[f64]]) -> Result<Forward> {
        let length = chunks.first().map_or(0, |c| c.len());
        if length < self.config.hop_samples() || chunks.iter().any(|c| c.len() != length) {
            return Err(crate::error::config_err(
                "chunks",
                "chunks must share a length of at least one hop",
            ));
        }
        let specs: Vec<MultiResSpectrogram> = chunks
            .par_iter()
            .map(|c| self.analyze(c))
            .collect::<Result<_>>()?;
        let frames = specs[0].num_frames();
        let features = self.encode(tape, ctx, &specs)?;
        let masks = self.separate_masks(tape, ctx, features, chunks.len(), frames)?;
        let specs: Arc<Vec<Vec<Spectrogram>>> = Arc::new(specs.into_iter().map(|s| s.resolutions).collect());
        let estimates = reconstruct_op(tape, specs, &masks, self.config.num_sources, length)?;
        Ok(Forward { estimates, masks })
    }

    /// Loss of a batch: `chunks[b]` with `references[b][j]` per source.
    pub fn loss(&self, tape: &mut Tape, ctx: &mut ForwardCtx, chunks: &[&[f64]], references: &[&[Vec<f64>]]) -> Result<Var> {
        let fwd = self.forward(tape, ctx, chunks)?;
        let rows: Vec<Vec<f64>> = references.iter().flat_map(|r| r.iter().cloned()).collect();
        loss_op(tape, fwd.estimates, Arc::new(rows))
    }

    /// One inference pass over a single chunk of any length.
    pub fn separate_chunk(&self, mixture: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::inference();
        let fwd = self.forward(&mut tape, &mut ForwardCtx::eval(), &[mixture])?;
        let est = tape.value(fwd.estimates).data();
        let len = mixture.len();
        Ok(est.chunks(len).map(<[f64]>::to_vec).collect())
    }

    /// Separates a mixture of any length. Inputs up to one chunk are
    /// processed in a single pass; longer inputs in chunk-length windows at
    /// 50% overlap, cross-faded with triangular weights.
    pub fn infer(&self, mixture: &[f64]) -> Result<Vec<Vec<f64>>> {
        let chunk = self.config.chunk_samples();
        let len = mixture.len();
        let s = self.config.num_sources;
        if len <= chunk {
            if len < self.config.hop_samples() {
                return Ok(vec![vec![0.0; len]; s]);
            }
            return self.separate_chunk(mixture);
        }
        let step = (chunk / 2).max(1);
        let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|&st| st + chunk < len).collect();
        starts.push(len - chunk);
        let weight: Vec<f64> = (0..chunk)
            .map(|t| 1.0 - ((2.0 * (t as f64 + 0.5) / chunk as f64) - 1.0).abs())
            .collect();
        let parts: Vec<Vec<Vec<f64>>> = starts
            .par_iter()
            .map(|&st| self.separate_chunk(&mixture[st..st + chunk]))
            .collect::<Result<_>>()?;
        let mut out = vec![vec![0.0; len]; s];
        let mut norm = vec![0.0; len];
        for (&st, part) in starts.iter().zip(&parts) {
            for (t, w) in weight.iter().enumerate() {
                norm[st + t] += w;
            }
            for (o, p) in out.iter_mut().zip(part) {
                for (t, w) in weight.iter().enumerate() {
                    o[st + t] += w * p[t];
                }
            }
        }
        for o in &mut out {
            for (v, n) in o.iter_mut().zip(&norm) {
                *v /= n;
            }
        }
        Ok(out)
    }

    /// Applies externally supplied masks (one `[N × S·F_i]` slice per
    /// resolution) to the mixture and resynthesizes.
    pub fn reconstruct_with_masks(&self, mixture: &[f64], masks: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let specs = self.analyze(mixture)?;
        Ok(reconstruct(&specs.resolutions, masks, self.config.num_sources, mixture.len()))
    }

    /// Checkpoint with the configuration under `meta.model` plus `extra`
    /// fields merged into the metadata.
    pub fn to_checkpoint(&self, extra: serde_json::Map<String, serde_json::Value>) -> Checkpoint {
        let mut meta = extra;
        meta.insert("model".into(), serde_json::to_value(&self.config).expect("config serializes"));
        Checkpoint::from_store(&self.store, serde_json::Value::Object(meta))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: MrxConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| ModelError::Checkpoint(format!("model config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        model.store.load_named(ck.named())?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(Default::default()).save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
