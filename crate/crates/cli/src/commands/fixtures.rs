//! `fixtures`: writes deterministic synthetic clip pools and a matching
//! `pools.json`, so the pipeline runs without external corpora.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use stemkit_core::mixgen::fixtures::{write_pools, FixtureSpec};
use stemkit_core::mixgen::MixConfig;

use crate::config::{create_dir, resolve, write_json, write_resolved};
use crate::error::{CliError, Result};

#[derive(Args, Debug)]
pub struct FixturesArgs {
    /// Output directory for the pools.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: FixtureSettings,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSettings {
    /// Clip sample rate in Hz [default: 16000].
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Clips per class for the train, validation and test splits [default: 12,4,6].
    #[arg(long, value_delimiter = ',')]
    pub clips: Option<Vec<usize>>,
    /// Generator seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: FixturesArgs) -> Result<()> {
    let s = resolve(args.config.as_deref(), &args.settings)?;
    let defaults = FixtureSpec::default();
    let clips = s.clips.unwrap_or_else(|| defaults.clips_per_split.to_vec());
    let clips_per_split: [usize; 3] = clips
        .try_into()
        .map_err(|_| CliError::usage("clips", "expected three counts: train,validation,test"))?;
    let spec = FixtureSpec {
        sample_rate: stemkit_core::audio::check_sample_rate(s.sample_rate.unwrap_or(defaults.sample_rate))?,
        clips_per_split,
        seed: s.seed.unwrap_or(defaults.seed),
    };
    create_dir(&args.out)?;
    log::info!("writing fixture pools to {}", args.out.display());
    let index = write_pools(&spec, &args.out)?;
    index.save(args.out.join("pools.json"))?;
    // a ready-to-edit mixing profile at the pool rate
    let profiles = MixConfig {
        sample_rate: spec.sample_rate,
        ..MixConfig::default()
    };
    write_json(&args.out.join("profiles.json"), &profiles)?;
    write_resolved(&args.out, "fixtures", serde_json::to_value(&spec).expect("spec serializes"))?;
    println!("{} clips written to {}", index.entries.len(), args.out.display());
    Ok(())
}
