//! `mix`: renders a corpus of mixtures with stems and manifests.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stemkit_core::audio::write_wav;
use stemkit_core::manifest::write_manifest;
use stemkit_core::mixgen::{plan_mixture, render, ClipPool, MixConfig, PoolIndex, Split};
use stemkit_core::{AnnotationManifest, WavEncoding};

use super::stats::corpus_stats;
use crate::config::{create_dir, require_file, resolve, with_jobs, write_json, write_resolved};
use crate::dataset::{mixture_id, MANIFEST_FILE, MIX_FILE, STEM_FILES};
use crate::error::{CliError, Result};

#[derive(Args, Debug)]
pub struct MixArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: MixSettings,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSettings {
    /// Pool index (`pools.json`, clip paths relative to its directory) or a
    /// clip directory laid out as `<split>/<class>/*.wav`.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Mixing profiles JSON [default: built-in class profiles].
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Number of mixtures [default: 10].
    #[arg(long)]
    pub count: Option<usize>,
    /// Corpus seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pool split to draw from: train, validation or test [default: train].
    #[arg(long)]
    pub split: Option<String>,
    /// Mixture length in seconds (overrides the profiles file).
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Corpus sample rate in Hz (overrides the profiles file).
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Mixtures rendered in parallel [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// WAV encoding: float32 or pcm16 [default: float32].
    #[arg(long)]
    pub encoding: Option<String>,
    /// Frame length of the overlap statistics in seconds [default: 1.0].
    #[arg(long)]
    pub frame_s: Option<f64>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    pools: &'a Path,
    count: usize,
    seed: u64,
    split: Split,
    encoding: &'a str,
    frame_s: f64,
    mix_config: &'a MixConfig,
}

/// Per-mixture RNG stream: the split occupies the high word so corpora of
/// different splits never share a stream.
fn stream(split: Split, index: usize) -> u64 {
    ((split as u64) << 32) | index as u64
}

pub fn run(args: MixArgs) -> Result<()> {
    let s = resolve(args.config.as_deref(), &args.settings)?;
    let pools_path = s.pools.clone().ok_or_else(|| CliError::usage("pools", "a pool index is required"))?;
    if !pools_path.is_dir() {
        require_file(&pools_path, "pools")?;
    }
    let mut mix_config = match &s.profiles {
        Some(p) => {
            require_file(p, "profiles")?;
            MixConfig::load(p)?
        }
        None => MixConfig::default(),
    };
    if let Some(d) = s.duration_s {
        mix_config.duration_s = d;
    }
    if let Some(r) = s.sample_rate {
        mix_config.sample_rate = r;
    }
    mix_config.validate()?;
    let count = s.count.unwrap_or(10);
    let seed = s.seed.unwrap_or(0);
    let split: Split = s.split.as_deref().unwrap_or("train").parse()?;
    let encoding_name = s.encoding.clone().unwrap_or_else(|| "float32".into());
    let encoding: WavEncoding = encoding_name.parse()?;
    let frame_s = s.frame_s.unwrap_or(1.0);
    if !(frame_s.is_finite() && frame_s > 0.0) {
        return Err(CliError::usage("frame_s", "must be positive"));
    }

    // a directory is scanned as <split>/<class>/*.wav
    let (index, base) = if pools_path.is_dir() {
        (PoolIndex::from_directory(&pools_path)?, pools_path.as_path())
    } else {
        (PoolIndex::load(&pools_path)?, pools_path.parent().unwrap_or(Path::new(".")))
    };
    log::info!("loading {} pool at {} Hz", split.as_str(), mix_config.sample_rate);
    let pool = ClipPool::load(&index, split, base, mix_config.sample_rate)?;
    for p in &mix_config.profiles {
        if pool.of(p.class).is_empty() {
            return Err(CliError::usage(
                format!("pools.{}", p.class),
                format!("no {} clips in the {} split but lambda is {}", p.class, split.as_str(), p.lambda),
            ));
        }
    }

    create_dir(&args.out)?;
    let resolved = Resolved {
        pools: &pools_path,
        count,
        seed,
        split,
        encoding: &encoding_name,
        frame_s,
        mix_config: &mix_config,
    };
    write_resolved(&args.out, "mix", serde_json::to_value(&resolved).expect("settings serialize"))?;

    let manifests: Vec<AnnotationManifest> = with_jobs(s.jobs, || {
        (0..count)
            .into_par_iter()
            .map(|i| render_one(&pool, &mix_config, seed, split, i, encoding, &args.out))
            .collect::<Result<Vec<_>>>()
    })??;
    let stats = corpus_stats(&manifests, frame_s);
    write_json(&args.out.join("corpus_stats.json"), &stats)?;
    println!(
        "{count} mixtures written to {}; active-stem fractions 3/2/1/0: {:.3} {:.3} {:.3} {:.3}",
        args.out.display(),
        stats.overlap.three_active,
        stats.overlap.two_active,
        stats.overlap.one_active,
        stats.overlap.zero_active
    );
    Ok(())
}

fn render_one(
    pool: &ClipPool,
    config: &MixConfig,
    seed: u64,
    split: Split,
    index: usize,
    encoding: WavEncoding,
    out: &Path,
) -> Result<AnnotationManifest> {
    let id = mixture_id(index);
    let recipe = plan_mixture(pool, config, seed, stream(split, index), &id)?;
    let rendered = render(&recipe, pool)?;
    let dir = out.join(&id);
    create_dir(&dir)?;
    write_wav(dir.join(MIX_FILE), &rendered.mixture, encoding)?;
    for (name, stem) in STEM_FILES.iter().zip(&rendered.stems) {
        write_wav(dir.join(name), stem, encoding)?;
    }
    write_manifest(dir.join(MANIFEST_FILE), &rendered.manifest)?;
    log::debug!("rendered {id}");
    Ok(rendered.manifest)
}
