//! `train`: fits a separation model on a corpus written by `mix`.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use stemkit_core::resample::resample_samples;
use stemkit_model::{chunk_examples, Example, MrxConfig, MrxModel, TrainConfig, Trainer};

use crate::config::{create_dir, require_dir, require_file, resolve, write_json, write_resolved};
use crate::dataset::{mixture_dirs, read_track};
use crate::error::{CliError, Result};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Output directory for checkpoints and history.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainSettings,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Training corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation corpus directory; the schedule follows training loss without it.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Starting point for every setting: `toy` or `full` [default: full].
    #[arg(long)]
    pub preset: Option<String>,
    /// Continue from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs, counting those already run when resuming.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model sample rate; data at other rates is resampled.
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Training chunk length in seconds.
    #[arg(long)]
    pub chunk_s: Option<f64>,
    /// Analysis windows in milliseconds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub window_ms: Option<Vec<f64>>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    #[arg(long)]
    pub lstm_layers: Option<usize>,
    #[arg(long)]
    pub num_stacks: Option<usize>,
}

/// Model and training defaults of a named preset.
pub fn preset(name: &str) -> Result<(MrxConfig, TrainConfig)> {
    match name {
        "full" => Ok((MrxConfig::default(), TrainConfig::default())),
        "toy" => Ok((
            MrxConfig::toy(),
            TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
        )),
        other => Err(CliError::usage("preset", format!("unknown preset {other:?} (expected toy or full)"))),
    }
}

fn apply_overrides(s: &TrainSettings, model: &mut MrxConfig, train: &mut TrainConfig) {
    if let Some(v) = s.epochs {
        train.epochs = v;
    }
    if let Some(v) = s.lr {
        train.lr = v;
    }
    if let Some(v) = s.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = s.seed {
        train.seed = v;
    }
    if let Some(v) = s.sample_rate {
        model.sample_rate = v;
    }
    if let Some(v) = s.chunk_s {
        model.chunk_s = v;
    }
    if let Some(v) = &s.window_ms {
        model.window_ms = v.clone();
    }
    if let Some(v) = s.hidden {
        model.hidden = v;
    }
    if let Some(v) = s.lstm_hidden {
        model.lstm_hidden = v;
    }
    if let Some(v) = s.lstm_layers {
        model.lstm_layers = v;
    }
    if let Some(v) = s.num_stacks {
        model.num_stacks = v;
    }
}

fn validate_train(t: &TrainConfig) -> Result<()> {
    if !(t.lr.is_finite() && t.lr > 0.0) {
        return Err(CliError::usage("lr", "must be positive"));
    }
    if t.batch_size == 0 {
        return Err(CliError::usage("batch_size", "must be positive"));
    }
    Ok(())
}

/// Reads every mixture under `root`, resamples to the model rate and cuts
/// consecutive chunks.
fn load_examples(root: &Path, field: &str, config: &MrxConfig) -> Result<Vec<Example>> {
    let rate = config.sample_rate;
    let chunk = config.chunk_samples();
    let mut out = Vec::new();
    for (id, dir) in mixture_dirs(root, field)? {
        let track = read_track(&id, &dir)?;
        let to_rate = |b: &stemkit_core::AudioBuffer| {
            let x = b.to_f64();
            if b.sample_rate() == rate {
                x
            } else {
                resample_samples(&x, b.sample_rate(), rate)
            }
        };
        let mixture = to_rate(&track.mixture);
        let sources: Vec<Vec<f64>> = track.stems.iter().map(to_rate).collect();
        out.extend(chunk_examples(&mixture, &sources, chunk));
    }
    if out.is_empty() {
        return Err(CliError::usage(
            field,
            format!("no {} s chunks in {}; mixtures are shorter than chunk_s", config.chunk_s, root.display()),
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Resolved<'a> {
    data: &'a Path,
    val: Option<&'a Path>,
    preset: &'a str,
    resume: Option<&'a Path>,
    model: &'a MrxConfig,
    train: &'a TrainConfig,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let s = resolve(args.config.as_deref(), &args.settings)?;
    let data = s.data.clone().ok_or_else(|| CliError::usage("data", "a training corpus is required"))?;
    require_dir(&data, "data")?;
    if let Some(v) = &s.val {
        require_dir(v, "val")?;
    }
    let preset_name = s.preset.clone().unwrap_or_else(|| "full".into());
    let (mut model_config, mut train_config) = preset(&preset_name)?;
    let mut trainer = match &s.resume {
        Some(path) => {
            require_file(path, "resume")?;
            let mut t = Trainer::resume(path)?;
            if let Some(e) = s.epochs {
                t.config.epochs = e;
            }
            log::info!("resuming {} after epoch {}", path.display(), t.epoch());
            t
        }
        None => {
            apply_overrides(&s, &mut model_config, &mut train_config);
            validate_train(&train_config)?;
            let model = MrxModel::new(model_config, train_config.seed)?;
            Trainer::new(model, train_config)
        }
    };
    let model_config = trainer.model.config().clone();
    let train_config = trainer.config.clone();

    create_dir(&args.out)?;
    let resolved = Resolved {
        data: &data,
        val: s.val.as_deref(),
        preset: &preset_name,
        resume: s.resume.as_deref(),
        model: &model_config,
        train: &train_config,
    };
    write_resolved(&args.out, "train", serde_json::to_value(&resolved).expect("settings serialize"))?;

    let train = load_examples(&data, "data", &model_config)?;
    let val = match &s.val {
        Some(v) => load_examples(v, "val", &model_config)?,
        None => Vec::new(),
    };
    log::info!(
        "{} training and {} validation chunks of {} s at {} Hz",
        train.len(),
        val.len(),
        model_config.chunk_s,
        model_config.sample_rate
    );
    let ckpt_dir = args.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    while trainer.epoch() < train_config.epochs {
        let rec = trainer.run_epoch(&train, &val)?;
        let val_text = rec.val_loss.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
        log::info!("epoch {} train {:.4} val {} lr {:e}", rec.epoch, rec.train_loss, val_text, rec.lr);
        let path = ckpt_dir.join(format!("epoch_{:04}.ckpt", rec.epoch));
        trainer.save(&path)?;
        std::fs::copy(&path, args.out.join("model.ckpt"))?;
        write_json(&args.out.join("history.json"), trainer.history())?;
    }
    if let Some(last) = trainer.history().epochs.last() {
        println!("trained {} epochs; final train loss {:.4}", last.epoch, last.train_loss);
    }
    Ok(())
}
