//! `stats`: corpus statistics from the manifests of a generated corpus.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use stemkit_core::manifest::read_manifest;
use stemkit_core::mixgen::{corpus_overlap_stats, OverlapStats};
use stemkit_core::{AnnotationManifest, SoundClass};

use crate::config::write_json;
use crate::dataset::manifest_paths;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mixtures: usize,
    /// Fractions of `frame_s` frames with 3, 2, 1 and 0 active stems.
    pub overlap: OverlapStats,
    /// Mean number of events per mixture.
    pub events_per_mixture: BTreeMap<SoundClass, f64>,
    /// Mean sampled class loudness.
    pub mean_class_lufs: BTreeMap<SoundClass, f64>,
    pub total_duration_s: f64,
}

pub fn corpus_stats(manifests: &[AnnotationManifest], frame_s: f64) -> CorpusStats {
    let n = manifests.len().max(1) as f64;
    let mut events = BTreeMap::new();
    let mut lufs = BTreeMap::new();
    for class in SoundClass::ALL {
        let count: usize = manifests.iter().map(|m| m.events_of(class).count()).sum();
        events.insert(class, count as f64 / n);
        let level: f64 = manifests.iter().map(|m| m.class_lufs[&class]).sum();
        lufs.insert(class, level / n);
    }
    CorpusStats {
        mixtures: manifests.len(),
        overlap: corpus_overlap_stats(manifests, frame_s),
        events_per_mixture: events,
        mean_class_lufs: lufs,
        total_duration_s: manifests.iter().map(|m| m.duration_s).sum(),
    }
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Corpus directory written by `mix`.
    #[arg(long)]
    pub dir: PathBuf,
    /// Frame length for the overlap statistics in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub frame_s: f64,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: StatsArgs) -> Result<()> {
    if !(args.frame_s.is_finite() && args.frame_s > 0.0) {
        return Err(CliError::usage("frame_s", "must be positive"));
    }
    let manifests = manifest_paths(&args.dir, "dir")?
        .iter()
        .map(|p| Ok(read_manifest(p)?))
        .collect::<Result<Vec<_>>>()?;
    let stats = corpus_stats(&manifests, args.frame_s);
    match &args.out {
        Some(path) => write_json(path, &stats)?,
        None => println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize")),
    }
    Ok(())
}
