//! On-disk corpus layout: one directory per mixture holding `mix.wav`,
//! the three stems and `manifest.json`.

use std::path::{Path, PathBuf};

use stemkit_core::audio::read_wav;
use stemkit_core::manifest::read_manifest;
use stemkit_core::{AnnotationManifest, AudioBuffer};

use crate::error::{CliError, Result};

pub const MIX_FILE: &str = "mix.wav";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Stem file names in canonical source order.
pub const STEM_FILES: [&str; 3] = ["music.wav", "speech.wav", "sfx.wav"];

pub fn mixture_id(index: usize) -> String {
    format!("mix_{index:05}")
}

/// Mixture directories under `root` sorted by name, or `root` itself when
/// it directly holds a mixture.
pub fn mixture_dirs(root: &Path, field: &str) -> Result<Vec<(String, PathBuf)>> {
    crate::config::require_dir(root, field)?;
    if root.join(MIX_FILE).is_file() {
        let id = root.file_name().map_or_else(|| "mixture".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(id, root.to_path_buf())]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| CliError::runtime(format!("{}: {e}", root.display())))? {
        let path = entry?.path();
        if path.join(MIX_FILE).is_file() {
            out.push((path.file_name().expect("entry has a name").to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::usage(field, format!("no mixtures found under {}", root.display())));
    }
    Ok(out)
}

pub fn manifest_paths(root: &Path, field: &str) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = mixture_dirs(root, field)?
        .into_iter()
        .map(|(_, d)| d.join(MANIFEST_FILE))
        .filter(|p| p.is_file())
        .collect();
    if paths.is_empty() {
        return Err(CliError::usage(field, format!("no manifests found under {}", root.display())));
    }
    Ok(paths)
}

/// A mixture with its reference stems and, when present, its manifest.
pub struct Track {
    pub mixture: AudioBuffer,
    pub stems: Vec<AudioBuffer>,
    pub manifest: Option<AnnotationManifest>,
}

pub fn read_stems(dir: &Path) -> Result<Vec<AudioBuffer>> {
    STEM_FILES.iter().map(|f| Ok(read_wav(dir.join(f))?)).collect()
}

pub fn read_track(id: &str, dir: &Path) -> Result<Track> {
    let mixture = read_wav(dir.join(MIX_FILE))?;
    let stems = read_stems(dir)?;
    for (name, s) in STEM_FILES.iter().zip(&stems) {
        if s.sample_rate() != mixture.sample_rate() || s.len() != mixture.len() {
            return Err(CliError::usage(
                "references",
                format!("{id}/{name}: {} samples at {} Hz, mixture {} at {} Hz", s.len(), s.sample_rate(), mixture.len(), mixture.sample_rate()),
            ));
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() {
        Some(read_manifest(&manifest_path)?)
    } else {
        None
    };
    Ok(Track {
        mixture,
        stems,
        manifest,
    })
}
