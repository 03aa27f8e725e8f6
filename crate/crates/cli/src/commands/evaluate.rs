//! `evaluate`: global and seven-scenario scores of separated stems
//! against the references of a corpus.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stemkit_core::dsp::StftConfig;
use stemkit_core::metrics::{evaluate, oracle_psf, EvalReport};

use crate::config::{create_dir, resolve, with_jobs, write_json, write_resolved};
use crate::dataset::{mixture_dirs, read_stems, read_track, STEM_FILES};
use crate::error::{CliError, Result};

/// Analysis window of the oracle mask in milliseconds (quarter hop).
const ORACLE_WINDOW_MS: f64 = 32.0;

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Output directory for `report.json` and `report.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: EvaluateSettings,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    /// Corpus (or single mixture) directory with references and manifests.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Estimated stems, laid out like the references; without it the
    /// mixture itself is scored as every estimate.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Add upper-bound rows: `psf` for the oracle phase-sensitive filter.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Segment length of the scenario analysis in seconds [default: 1.0].
    #[arg(long)]
    pub segment_s: Option<f64>,
    /// Mixtures evaluated in parallel [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Report {
    #[serde(flatten)]
    report: EvalReport,
    /// `estimates`, or `mixture` for the no-processing baseline.
    system: &'static str,
    tracks: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_psf: Option<EvalReport>,
}

fn merge_all(reports: impl Iterator<Item = EvalReport>) -> Option<EvalReport> {
    reports.reduce(|a, b| a.merge(&b))
}

fn estimate_dir(root: &Path, id: &str, single: bool) -> PathBuf {
    if single && root.join(STEM_FILES[0]).is_file() {
        root.to_path_buf()
    } else {
        root.join(id)
    }
}

fn score_track(
    id: &str,
    dir: &Path,
    estimates: Option<(&Path, bool)>,
    oracle: bool,
    segment_s: f64,
) -> Result<(EvalReport, Option<EvalReport>)> {
    let track = read_track(id, dir)?;
    let manifest = track
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("references", format!("{id} has no manifest.json")))?;
    let mixture = track.mixture.to_f64();
    let refs: Vec<Vec<f64>> = track.stems.iter().map(|s| s.to_f64()).collect();
    let est: Vec<Vec<f64>> = match estimates {
        Some((root, single)) => {
            let est_dir = estimate_dir(root, id, single);
            let stems = read_stems(&est_dir)?;
            if let Some(s) = stems.iter().find(|s| s.sample_rate() != track.mixture.sample_rate()) {
                return Err(CliError::usage(
                    "estimates",
                    format!("{id}: estimates at {} Hz, references at {} Hz", s.sample_rate(), track.mixture.sample_rate()),
                ));
            }
            stems.iter().map(|s| s.to_f64()).collect()
        }
        None => vec![mixture.clone(); 3],
    };
    let report = evaluate(&est, &refs, &mixture, manifest, segment_s)?;
    let oracle_report = if oracle {
        let config = StftConfig::quarter_hop(ORACLE_WINDOW_MS, track.mixture.sample_rate())?;
        let est = oracle_psf(&mixture, &refs, &config)?;
        Some(evaluate(&est, &refs, &mixture, manifest, segment_s)?)
    } else {
        None
    };
    Ok((report, oracle_report))
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let s = resolve(args.config.as_deref(), &args.settings)?;
    let refs = s.references.clone().ok_or_else(|| CliError::usage("references", "a reference corpus is required"))?;
    let oracle = match s.oracle.as_deref() {
        None => false,
        Some("psf") => true,
        Some(other) => return Err(CliError::usage("oracle", format!("unknown oracle {other:?} (expected psf)"))),
    };
    let segment_s = s.segment_s.unwrap_or(1.0);
    if !(segment_s.is_finite() && segment_s > 0.0) {
        return Err(CliError::usage("segment_s", "must be positive"));
    }
    let tracks = mixture_dirs(&refs, "references")?;
    if let Some(e) = &s.estimates {
        crate::config::require_dir(e, "estimates")?;
    }
    let single = tracks.len() == 1;
    create_dir(&args.out)?;
    write_resolved(&args.out, "evaluate", serde_json::to_value(&s).expect("settings serialize"))?;

    let scored = with_jobs(s.jobs, || {
        tracks
            .par_iter()
            .map(|(id, dir)| score_track(id, dir, s.estimates.as_deref().map(|e| (e, single)), oracle, segment_s))
            .collect::<Result<Vec<_>>>()
    })??;
    let (reports, oracles): (Vec<EvalReport>, Vec<Option<EvalReport>>) = scored.into_iter().unzip();
    let report = Report {
        report: merge_all(reports.into_iter()).expect("at least one track"),
        system: if s.estimates.is_some() { "estimates" } else { "mixture" },
        tracks: tracks.iter().map(|(id, _)| id.clone()).collect(),
        oracle_psf: merge_all(oracles.into_iter().flatten()),
    };
    write_json(&args.out.join("report.json"), &report)?;
    let mut table = format!("System: {}\n{}", report.system, report.report.to_table());
    if let Some(o) = &report.oracle_psf {
        table.push_str(&format!("\nSystem: oracle PSF\n{}", o.to_table()));
    }
    table.push_str("\n* final SI-SDR, source alone; \u{2020} PES, source silent; other cells SI-SDRi\n");
    std::fs::write(args.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
