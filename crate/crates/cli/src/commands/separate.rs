//! `separate`: runs a trained model on one mixture file.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use stemkit_core::audio::{read_wav, write_wav};
use stemkit_core::resample::resample_samples;
use stemkit_core::{AudioBuffer, WavEncoding};
use stemkit_model::MrxModel;

use crate::config::{create_dir, require_file, resolve, write_resolved};
use crate::dataset::STEM_FILES;
use crate::error::{CliError, Result};

#[derive(Args, Debug)]
pub struct SeparateArgs {
    /// Output directory for the stems.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SeparateSettings,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparateSettings {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Mixture WAV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Resample the input to this rate (the model rate) and the stems back.
    #[arg(long)]
    pub process_rate: Option<u32>,
    /// WAV encoding: float32 or pcm16 [default: float32].
    #[arg(long)]
    pub encoding: Option<String>,
}

pub fn run(args: SeparateArgs) -> Result<()> {
    let s = resolve(args.config.as_deref(), &args.settings)?;
    let ckpt = s.checkpoint.clone().ok_or_else(|| CliError::usage("checkpoint", "a model checkpoint is required"))?;
    let input_path = s.input.clone().ok_or_else(|| CliError::usage("input", "an input WAV is required"))?;
    require_file(&ckpt, "checkpoint")?;
    require_file(&input_path, "input")?;
    let encoding: WavEncoding = s.encoding.as_deref().unwrap_or("float32").parse()?;
    let model = MrxModel::load(&ckpt)?;
    let input = read_wav(&input_path)?;
    let in_rate = input.sample_rate();
    let model_rate = model.config().sample_rate;
    match s.process_rate {
        Some(r) if r != model_rate => {
            return Err(CliError::usage(
                "process_rate",
                format!("the model runs at {model_rate} Hz, not {r} Hz"),
            ))
        }
        None if in_rate != model_rate => {
            return Err(CliError::usage(
                "process_rate",
                format!("input is at {in_rate} Hz but the model runs at {model_rate} Hz; pass --process-rate {model_rate} to resample"),
            ))
        }
        _ => {}
    }
    create_dir(&args.out)?;
    write_resolved(&args.out, "separate", serde_json::to_value(&s).expect("settings serialize"))?;

    let x = input.to_f64();
    let resampled = in_rate != model_rate;
    let signal = if resampled { resample_samples(&x, in_rate, model_rate) } else { x };
    log::info!("separating {} samples at {model_rate} Hz", signal.len());
    let stems = model.infer(&signal)?;
    for (name, stem) in STEM_FILES.iter().zip(stems) {
        let mut y = if resampled { resample_samples(&stem, model_rate, in_rate) } else { stem };
        y.resize(input.len(), 0.0);
        write_wav(args.out.join(name), &AudioBuffer::from_f64(&y, in_rate)?, encoding)?;
    }
    println!("stems written to {}", args.out.display());
    Ok(())
}
