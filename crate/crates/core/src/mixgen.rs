//! Soundtrack mixture synthesis.
//!
//! Each mixture draws, per class, a zero-truncated Poisson number of clips,
//! lays them out left to right with random gaps (no overlap within a class),
//! levels every excerpt to a per-mixture class loudness, and renders three
//! stems (music, speech, effects) whose sample-wise sum is the mixture.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioBuffer};
use crate::dsp::{db_to_gain, integrated_lufs_samples, non_silent_bounds, Loudness, DEFAULT_SILENCE_DB};
use crate::error::{Error, Result};
use crate::manifest::{AnnotationManifest, Event, SoundClass, Stem};
use crate::resample::resample_samples;

/// Shortest event kept after boundary truncation; also the minimum
/// length for which integrated loudness is defined.
pub const MIN_EVENT_S: f64 = 0.4;
const MAX_REDRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixProfile {
    pub class: SoundClass,
    /// Expected clip count of the zero-truncated Poisson draw.
    pub lambda: f64,
    pub target_lufs: f64,
    #[serde(default = "default_mixture_jitter")]
    pub mixture_jitter_lu: f64,
    #[serde(default = "default_clip_jitter")]
    pub clip_jitter_lu: f64,
    /// Shortest excerpt cut from a longer clip. Ignored for speech, which
    /// always uses whole utterances.
    #[serde(default)]
    pub min_excerpt_s: Option<f64>,
}

fn default_mixture_jitter() -> f64 {
    2.0
}

fn default_clip_jitter() -> f64 {
    1.0
}

impl ClassMixProfile {
    pub fn new(class: SoundClass, lambda: f64, target_lufs: f64) -> Self {
        Self {
            class,
            lambda,
            target_lufs,
            mixture_jitter_lu: default_mixture_jitter(),
            clip_jitter_lu: default_clip_jitter(),
            min_excerpt_s: None,
        }
    }

    pub fn min_excerpt(&self) -> f64 {
        self.min_excerpt_s.unwrap_or(match self.class {
            SoundClass::Music => 3.0,
            _ => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("profiles.{}.{f}", self.class);
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::validation(field("lambda"), "must be positive"));
        }
        if !self.target_lufs.is_finite() {
            return Err(Error::validation(field("target_lufs"), "must be finite"));
        }
        if !(self.mixture_jitter_lu >= 0.0 && self.clip_jitter_lu >= 0.0) {
            return Err(Error::validation(field("mixture_jitter_lu"), "jitters must be >= 0"));
        }
        if let Some(m) = self.min_excerpt_s {
            if !(m >= MIN_EVENT_S) {
                return Err(Error::validation(field("min_excerpt_s"), format!("must be >= {MIN_EVENT_S}")));
            }
        }
        Ok(())
    }
}

/// Mixing parameters shared by every mixture of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub profiles: Vec<ClassMixProfile>,
    /// Expected total gap per class as a fraction of the duration; gaps are
    /// drawn from `U(0, 2 * gap_fraction * duration / lambda)`.
    #[serde(default = "default_gap_fraction")]
    pub gap_fraction: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_gap_fraction() -> f64 {
    0.25
}

fn default_retries() -> usize {
    10
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            sample_rate: 44100,
            profiles: vec![
                ClassMixProfile::new(SoundClass::Music, 7.0, -24.0),
                ClassMixProfile::new(SoundClass::Speech, 8.0, -17.0),
                ClassMixProfile::new(SoundClass::SfxFg, 12.0, -21.0),
                ClassMixProfile::new(SoundClass::SfxBg, 6.0, -29.0),
            ],
            gap_fraction: default_gap_fraction(),
            max_retries: default_retries(),
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s >= MIN_EVENT_S) {
            return Err(Error::validation("duration_s", format!("must be >= {MIN_EVENT_S}")));
        }
        crate::audio::check_sample_rate(self.sample_rate)
            .map_err(|e| Error::validation("sample_rate", e.to_string()))?;
        if !(self.gap_fraction.is_finite() && self.gap_fraction >= 0.0) {
            return Err(Error::validation("gap_fraction", "must be >= 0"));
        }
        let mut seen = BTreeSet::new();
        for p in &self.profiles {
            p.validate()?;
            if !seen.insert(p.class) {
                return Err(Error::validation(format!("profiles.{}", p.class), "duplicate class"));
            }
        }
        Ok(())
    }

    pub fn profile(&self, class: SoundClass) -> Option<&ClassMixProfile> {
        self.profiles.iter().find(|p| p.class == class)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: MixConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn gap_max_s(&self, profile: &ClassMixProfile) -> f64 {
        2.0 * self.gap_fraction * self.duration_s / profile.lambda
    }
}

/// Zero-truncated Poisson draw: `P(k) = λ^k e^-λ / (k! (1 - e^-λ))`, k >= 1.
///
/// Rejects Poisson zeros; for very small λ (where rejection would spin for
/// ~1/λ iterations) the truncated distribution is inverted directly.
pub fn sample_ztp<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    assert!(lambda > 0.0 && lambda.is_finite(), "lambda must be positive");
    if lambda < 0.05 {
        let u: f64 = rng.random();
        let norm = -(-lambda).exp_m1();
        let mut p = lambda * (-lambda).exp() / norm;
        let mut cdf = p;
        let mut k = 1u32;
        while u > cdf && k < 64 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        return k;
    }
    let poisson = Poisson::new(lambda).expect("valid lambda");
    loop {
        let k = poisson.sample(rng);
        if k >= 1.0 {
            return k as u32;
        }
    }
}

/// Closed-form mean of the zero-truncated Poisson distribution.
pub fn ztp_mean(lambda: f64) -> f64 {
    lambda / -(-lambda).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::validation("split", format!("unknown split {s:?}"))),
        }
    }
}

/// Maps free-form effect labels onto foreground/background groups. Labels
/// in neither list (speech, instruments) are excluded from the pool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SfxGrouping {
    pub foreground: BTreeSet<String>,
    pub background: BTreeSet<String>,
}

impl SfxGrouping {
    /// Foreground wins when a clip carries labels of both groups.
    pub fn classify<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Option<SoundClass> {
        let mut background = false;
        for l in labels {
            if self.foreground.contains(l) {
                return Some(SoundClass::SfxFg);
            }
            background |= self.background.contains(l);
        }
        background.then_some(SoundClass::SfxBg)
    }
}

/// One line of a pool index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub path: String,
    /// `music`, `speech`, `sfx_fg`, `sfx_bg`, or `sfx` (resolved through
    /// the grouping from `metadata.labels`).
    pub class: String,
    pub split: Split,
    #[serde(default)]
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

/// Index of labeled clips (`pools.json`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolIndex {
    pub entries: Vec<PoolEntry>,
    #[serde(default)]
    pub sfx_grouping: SfxGrouping,
}

impl PoolIndex {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: PoolIndex = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        index.validate()?;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("pool index serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Scans `root/<split>/<class>/*.wav`; a `<clip>.json` sidecar, if
    /// present, becomes the clip metadata.
    pub fn from_directory(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut entries = Vec::new();
        for split in [Split::Train, Split::Validation, Split::Test] {
            let split_dir = root.join(split.as_str());
            if !split_dir.is_dir() {
                continue;
            }
            for class in ["music", "speech", "sfx_fg", "sfx_bg", "sfx"] {
                let dir = split_dir.join(class);
                if !dir.is_dir() {
                    continue;
                }
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| Error::io(&dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                    .collect();
                files.sort();
                for f in files {
                    let sidecar = f.with_extension("json");
                    let metadata = if sidecar.is_file() {
                        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
                        match serde_json::from_str(&text).map_err(|e| Error::Json {
                            path: sidecar.clone(),
                            source: e,
                        })? {
                            serde_json::Value::Object(m) => Some(m),
                            _ => None,
                        }
                    } else {
                        None
                    };
                    let rel = f.strip_prefix(root).unwrap_or(&f);
                    entries.push(PoolEntry {
                        path: rel.to_string_lossy().replace('\\', "/"),
                        class: class.to_string(),
                        split,
                        metadata,
                    });
                }
            }
        }
        let index = PoolIndex {
            entries,
            sfx_grouping: SfxGrouping::default(),
        };
        index.validate()?;
        Ok(index)
    }

    pub fn validate(&self) -> Result<()> {
        let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.class != "sfx" {
                e.class
                    .parse::<SoundClass>()
                    .map_err(|_| Error::validation(format!("entries[{i}].class"), format!("unknown class {:?}", e.class)))?;
            }
            if let Some(prev) = split_of.insert(&e.path, e.split) {
                if prev != e.split {
                    return Err(Error::validation(
                        format!("entries[{i}].split"),
                        format!("{} appears in both {} and {}", e.path, prev.as_str(), e.split.as_str()),
                    ));
                }
            }
        }
        Ok(())
    }

    fn resolve_class(&self, entry: &PoolEntry) -> Option<SoundClass> {
        if entry.class != "sfx" {
            return entry.class.parse().ok();
        }
        let labels: Vec<&str> = entry
            .metadata
            .as_ref()
            .and_then(|m| m.get("labels"))
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|v| v.as_str()).collect())
            .unwrap_or_default();
        self.sfx_grouping.classify(labels)
    }
}

/// A clip ready for mixing: resampled to the corpus rate and trimmed of
/// leading and trailing silence.
#[derive(Debug, Clone)]
pub struct Clip {
    pub path: String,
    pub audio: Arc<AudioBuffer>,
    /// Seconds removed from the start of the source file by trimming.
    pub trim_offset_s: f64,
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

impl Clip {
    pub fn duration_s(&self) -> f64 {
        self.audio.duration_s()
    }
}

/// Clips of one split, grouped by mixing class.
#[derive(Debug, Clone, Default)]
pub struct ClipPool {
    pub sample_rate: u32,
    pub clips: BTreeMap<SoundClass, Vec<Clip>>,
}

impl ClipPool {
    pub fn new(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            clips: BTreeMap::new(),
        }
    }

    /// Adds an in-memory clip after trimming. Clips that are shorter than
    /// [`MIN_EVENT_S`] once trimmed are skipped; returns whether it was kept.
    pub fn add(
        &mut self,
        class: SoundClass,
        path: impl Into<String>,
        audio: &AudioBuffer,
        metadata: Option<serde_json::Map<String, serde_json::Value>>,
    ) -> Result<bool> {
        let samples = if audio.sample_rate() == self.sample_rate {
            audio.clone()
        } else {
            AudioBuffer::from_f64(
                &resample_samples(&audio.to_f64(), audio.sample_rate(), self.sample_rate),
                self.sample_rate,
            )?
        };
        let Some((start, end)) = non_silent_bounds(&samples, DEFAULT_SILENCE_DB) else {
            return Ok(false);
        };
        let trimmed = samples.excerpt(start, end - start);
        if trimmed.duration_s() < MIN_EVENT_S {
            return Ok(false);
        }
        self.clips.entry(class).or_default().push(Clip {
            path: path.into(),
            audio: Arc::new(trimmed),
            trim_offset_s: start as f64 / self.sample_rate as f64,
            metadata,
        });
        Ok(true)
    }

    /// Loads every entry of `split`, resolving paths relative to `base_dir`.
    pub fn load(index: &PoolIndex, split: Split, base_dir: &Path, sample_rate: u32) -> Result<Self> {
        let mut pool = ClipPool::new(sample_rate);
        for entry in index.entries.iter().filter(|e| e.split == split) {
            let Some(class) = index.resolve_class(entry) else {
                continue;
            };
            let audio = read_wav(base_dir.join(&entry.path))?;
            pool.add(class, entry.path.clone(), &audio, entry.metadata.clone())?;
        }
        Ok(pool)
    }

    pub fn of(&self, class: SoundClass) -> &[Clip] {
        self.clips.get(&class).map_or(&[], Vec::as_slice)
    }
}

/// An event together with the excerpt it renders and the excerpt's
/// measured loudness.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedEvent {
    pub class: SoundClass,
    pub clip: usize,
    /// Excerpt start inside the trimmed clip, in samples.
    pub clip_start: usize,
    pub onset: usize,
    pub len: usize,
    pub measured_lufs: f64,
    pub gain_db: f64,
}

/// Full generative record of one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureRecipe {
    pub mixture_id: String,
    pub seed: u64,
    pub stream: u64,
    pub duration_samples: usize,
    pub sample_rate: u32,
    pub class_lufs: BTreeMap<SoundClass, f64>,
    pub events: Vec<PlannedEvent>,
}

impl MixtureRecipe {
    pub fn manifest(&self, pool: &ClipPool) -> AnnotationManifest {
        let rate = self.sample_rate as f64;
        let mut events: Vec<Event> = self
            .events
            .iter()
            .map(|p| {
                let clip = &pool.of(p.class)[p.clip];
                Event {
                    class: p.class,
                    source_file: clip.path.clone(),
                    source_start_s: clip.trim_offset_s + p.clip_start as f64 / rate,
                    onset_s: p.onset as f64 / rate,
                    offset_s: (p.onset + p.len) as f64 / rate,
                    gain_db: p.gain_db,
                    metadata: clip.metadata.clone(),
                }
            })
            .collect();
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.class.cmp(&b.class)));
        let mut class_lufs = self.class_lufs.clone();
        for c in SoundClass::ALL {
            class_lufs.entry(c).or_insert(f64::NAN);
        }
        // classes without a profile get a placeholder level
        for v in class_lufs.values_mut() {
            if v.is_nan() {
                *v = -70.0;
            }
        }
        AnnotationManifest {
            mixture_id: self.mixture_id.clone(),
            duration_s: self.duration_samples as f64 / rate,
            sample_rate: self.sample_rate,
            class_lufs,
            events,
        }
    }
}

fn excerpt_lufs(clip: &Clip, start: usize, len: usize) -> Option<f64> {
    let s: Vec<f64> = clip.audio.samples()[start..start + len].iter().map(|&v| v as f64).collect();
    match integrated_lufs_samples(&s, clip.audio.sample_rate()) {
        Ok(Loudness::Lufs(l)) => Some(l),
        _ => None,
    }
}

/// Lays out one class track left to right without overlap.
///
/// Speech uses whole utterances; other classes cut an excerpt of uniform
/// length in `[min_excerpt, full]` at a uniform start. Events that overrun
/// the end are truncated and dropped if shorter than [`MIN_EVENT_S`].
/// Excerpts with unmeasurable loudness are discarded and redrawn.
pub fn plan_class_track<R: Rng + ?Sized>(
    profile: &ClassMixProfile,
    clips: &[Clip],
    config: &MixConfig,
    rng: &mut R,
) -> Result<Vec<PlannedEvent>> {
    if clips.is_empty() {
        return Err(Error::validation(
            format!("pools.{}", profile.class),
            format!("no clips available for class {} with lambda {}", profile.class, profile.lambda),
        ));
    }
    let rate = config.sample_rate as f64;
    let duration = (config.duration_s * rate).round() as usize;
    let min_event = (MIN_EVENT_S * rate).ceil() as usize;
    let gap_max = config.gap_max_s(profile);
    for _ in 0..config.max_retries.max(1) {
        let k = sample_ztp(profile.lambda, rng);
        let mut events = Vec::new();
        let mut cursor = 0usize;
        for _ in 0..k {
            let gap = if gap_max > 0.0 { rng.random_range(0.0..gap_max) } else { 0.0 };
            let onset = cursor + (gap * rate).round() as usize;
            if onset + min_event > duration {
                break;
            }
            let mut placed = None;
            for _ in 0..MAX_REDRAWS {
                let ci = rng.random_range(0..clips.len());
                let clip = &clips[ci];
                let full = clip.audio.len();
                let (start, len) = if profile.class == SoundClass::Speech {
                    (0, full)
                } else {
                    let min_len = ((profile.min_excerpt() * rate).round() as usize).min(full);
                    let len = if min_len >= full { full } else { rng.random_range(min_len..=full) };
                    let start = if len >= full { 0 } else { rng.random_range(0..=full - len) };
                    (start, len)
                };
                let len = len.min(duration - onset);
                if len < min_event {
                    continue;
                }
                if let Some(lufs) = excerpt_lufs(clip, start, len) {
                    placed = Some(PlannedEvent {
                        class: profile.class,
                        clip: ci,
                        clip_start: start,
                        onset,
                        len,
                        measured_lufs: lufs,
                        gain_db: 0.0,
                    });
                    break;
                }
            }
            if let Some(p) = placed {
                cursor = p.onset + p.len;
                events.push(p);
            }
            if cursor + min_event > duration {
                break;
            }
        }
        if !events.is_empty() {
            return Ok(events);
        }
    }
    Err(Error::Planning(format!(
        "could not place any {} clip in {} s after {} attempts",
        profile.class, config.duration_s, config.max_retries
    )))
}

/// Draws one loudness per class around its target, then sets each event's
/// gain so its excerpt lands on that level plus a per-clip jitter.
pub fn assign_levels<R: Rng + ?Sized>(recipe: &mut MixtureRecipe, config: &MixConfig, rng: &mut R) {
    recipe.class_lufs.clear();
    for p in &config.profiles {
        let j = p.mixture_jitter_lu;
        let jitter = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        recipe.class_lufs.insert(p.class, p.target_lufs + jitter);
    }
    for ev in recipe.events.iter_mut() {
        let profile = config.profile(ev.class).expect("events only for profiled classes");
        let j = profile.clip_jitter_lu;
        let jitter = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        ev.gain_db = recipe.class_lufs[&ev.class] - ev.measured_lufs + jitter;
    }
}

/// Portable per-mixture RNG: ChaCha20 keyed by the corpus seed, one stream
/// per mixture index.
pub fn mixture_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples a complete recipe for mixture `stream` of the corpus `seed`.
pub fn plan_mixture(pool: &ClipPool, config: &MixConfig, seed: u64, stream: u64, mixture_id: &str) -> Result<MixtureRecipe> {
    config.validate()?;
    if pool.sample_rate != config.sample_rate {
        return Err(Error::validation(
            "sample_rate",
            format!("pool is at {} Hz but the mix config asks for {} Hz", pool.sample_rate, config.sample_rate),
        ));
    }
    let mut rng = mixture_rng(seed, stream);
    let mut events = Vec::new();
    for class in SoundClass::ALL {
        if let Some(profile) = config.profile(class) {
            events.extend(plan_class_track(profile, pool.of(class), config, &mut rng)?);
        }
    }
    let mut recipe = MixtureRecipe {
        mixture_id: mixture_id.to_string(),
        seed,
        stream,
        duration_samples: (config.duration_s * config.sample_rate as f64).round() as usize,
        sample_rate: config.sample_rate,
        class_lufs: BTreeMap::new(),
        events,
    };
    assign_levels(&mut recipe, config, &mut rng);
    Ok(recipe)
}

/// Per-class submixes (four classes) in double precision.
pub fn render_class_submixes(recipe: &MixtureRecipe, pool: &ClipPool) -> BTreeMap<SoundClass, Vec<f64>> {
    let mut out: BTreeMap<SoundClass, Vec<f64>> = SoundClass::ALL
        .iter()
        .map(|&c| (c, vec![0.0; recipe.duration_samples]))
        .collect();
    for ev in &recipe.events {
        let clip = &pool.of(ev.class)[ev.clip];
        let g = db_to_gain(ev.gain_db);
        let src = &clip.audio.samples()[ev.clip_start..ev.clip_start + ev.len];
        let dst = &mut out.get_mut(&ev.class).expect("all classes")[ev.onset..ev.onset + ev.len];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += g * s as f64;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RenderedMixture {
    pub mixture: AudioBuffer,
    /// Music, speech and effects stems, in that order.
    pub stems: [AudioBuffer; 3],
    pub manifest: AnnotationManifest,
}

/// Renders the stems and the mixture. Stems are rounded to `f32` first and
/// the mixture is their `f32` sum, so it equals the stem sum exactly.
pub fn render(recipe: &MixtureRecipe, pool: &ClipPool) -> Result<RenderedMixture> {
    let subs = render_class_submixes(recipe, pool);
    let rate = recipe.sample_rate;
    let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let music = to_f32(&subs[&SoundClass::Music]);
    let speech = to_f32(&subs[&SoundClass::Speech]);
    let sfx: Vec<f32> = subs[&SoundClass::SfxFg]
        .iter()
        .zip(&subs[&SoundClass::SfxBg])
        .map(|(a, b)| (a + b) as f32)
        .collect();
    let mixture: Vec<f32> = (0..recipe.duration_samples)
        .map(|i| music[i] + speech[i] + sfx[i])
        .collect();
    Ok(RenderedMixture {
        mixture: AudioBuffer::new(mixture, rate)?,
        stems: [
            AudioBuffer::new(music, rate)?,
            AudioBuffer::new(speech, rate)?,
            AudioBuffer::new(sfx, rate)?,
        ],
        manifest: recipe.manifest(pool),
    })
}

/// Fractions of frames with 3, 2, 1 and 0 active stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub three_active: f64,
    pub two_active: f64,
    pub one_active: f64,
    pub zero_active: f64,
    pub frames: usize,
    pub frame_s: f64,
}

impl OverlapStats {
    pub fn fractions(&self) -> [f64; 4] {
        [self.three_active, self.two_active, self.one_active, self.zero_active]
    }
}

/// Overlap statistics from annotations only: a stem is active in a frame
/// when any of its events intersects it. Partial trailing frames are
/// dropped.
pub fn corpus_overlap_stats(manifests: &[AnnotationManifest], frame_s: f64) -> OverlapStats {
    let mut counts = [0usize; 4];
    for m in manifests {
        let frames = (m.duration_s / frame_s + 1e-9).floor() as usize;
        for k in 0..frames {
            let (lo, hi) = (k as f64 * frame_s, (k + 1) as f64 * frame_s);
            let mut act = [false; 3];
            for e in &m.events {
                if e.onset_s < hi && e.offset_s > lo {
                    act[e.class.stem().index()] = true;
                }
            }
            counts[3 - act.iter().filter(|&&a| a).count()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    OverlapStats {
        three_active: frac(counts[0]),
        two_active: frac(counts[1]),
        one_active: frac(counts[2]),
        zero_active: frac(counts[3]),
        frames: total,
        frame_s,
    }
}

/// Stem index for a class, re-exported for convenience.
pub fn stem_of(class: SoundClass) -> Stem {
    class.stem()
}

pub mod fixtures {
    //! Deterministic synthetic clip pools standing in for real corpora.

    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::audio::{write_wav, WavEncoding};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct FixtureSpec {
        pub sample_rate: u32,
        /// Clips per class per split, in train/validation/test order.
        pub clips_per_split: [usize; 3],
        pub seed: u64,
    }

    impl Default for FixtureSpec {
        fn default() -> Self {
            Self {
                sample_rate: 16000,
                clips_per_split: [12, 4, 6],
                seed: 0,
            }
        }
    }

    fn one_pole_lowpass(x: &mut [f64], coeff: f64) {
        let mut y = 0.0;
        for v in x.iter_mut() {
            y += coeff * (*v - y);
            *v = y;
        }
    }

    /// Piecewise-constant chords with a slow tremolo; 30 s like a
    /// typical music excerpt.
    pub fn music_clip(rng: &mut impl Rng, rate: u32) -> Vec<f64> {
        let secs = rng.random_range(20.0..30.0);
        let len = (secs * rate as f64) as usize;
        let note_len = (rng.random_range(0.4..1.2) * rate as f64) as usize;
        let mut out = vec![0.0; len];
        let mut phases = [0.0f64; 3];
        let mut freqs = [220.0; 3];
        for (i, v) in out.iter_mut().enumerate() {
            if i % note_len == 0 {
                let root = 110.0 * 2f64.powf(rng.random_range(0..24) as f64 / 12.0);
                freqs = [root, root * 1.25, root * 1.5];
            }
            let mut s = 0.0;
            for (p, f) in phases.iter_mut().zip(freqs) {
                *p += 2.0 * PI * f / rate as f64;
                s += p.sin() + 0.3 * (2.0 * *p).sin();
            }
            *v = 0.1 * s * (1.0 + 0.2 * (2.0 * PI * 0.5 * i as f64 / rate as f64).sin());
        }
        out
    }

    /// Voiced pulse-train "syllables" with gaps, padded with silence on
    /// both ends so trimming has work to do.
    pub fn speech_clip(rng: &mut impl Rng, rate: u32) -> Vec<f64> {
        let secs = rng.random_range(3.0..14.0);
        let pad = (0.25 * rate as f64) as usize;
        let body = (secs * rate as f64) as usize;
        let mut out = vec![0.0; pad + body + pad];
        let mut t = 0usize;
        while t < body {
            let syl = (rng.random_range(0.12..0.35) * rate as f64) as usize;
            let pitch = rng.random_range(90.0..220.0);
            let period = (rate as f64 / pitch) as usize;
            for k in 0..syl.min(body - t) {
                let env = (PI * k as f64 / syl as f64).sin();
                if k % period == 0 {
                    out[pad + t + k] += env;
                }
            }
            t += syl + (rng.random_range(0.02..0.15) * rate as f64) as usize;
        }
        one_pole_lowpass(&mut out[pad..pad + body], 0.3);
        out
    }

    /// Short broadband bursts: one or several decaying noise hits.
    pub fn sfx_fg_clip(rng: &mut impl Rng, rate: u32) -> Vec<f64> {
        let secs = rng.random_range(1.0..6.0);
        let len = (secs * rate as f64) as usize;
        let mut out = vec![0.0; len];
        let hits = rng.random_range(1..4);
        for h in 0..hits {
            let start = h * len / hits;
            let decay = rng.random_range(0.1..0.6) * rate as f64;
            for (k, v) in out[start..].iter_mut().enumerate() {
                *v += rng.random_range(-1.0..1.0) * (-(k as f64) / decay).exp();
            }
        }
        out
    }

    /// Long low-passed noise ambience.
    pub fn sfx_bg_clip(rng: &mut impl Rng, rate: u32) -> Vec<f64> {
        let secs = rng.random_range(10.0..30.0);
        let len = (secs * rate as f64) as usize;
        let mut out: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        one_pole_lowpass(&mut out, rng.random_range(0.02..0.2));
        out
    }

    fn normalize(x: &mut [f64], peak: f64) {
        let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            x.iter_mut().for_each(|v| *v *= peak / m);
        }
    }

    /// Generates clips for every split and class in memory.
    pub fn build_pools(spec: &FixtureSpec) -> Result<BTreeMap<Split, ClipPool>> {
        let mut out = BTreeMap::new();
        for_each_clip(spec, |split, class, name, audio, meta| {
            out.entry(split)
                .or_insert_with(|| ClipPool::new(spec.sample_rate))
                .add(class, name, audio, meta)
                .map(|_| ())
        })?;
        Ok(out)
    }

    /// Writes clips as PCM16 WAVs under `dir/<split>/<class>/` and returns
    /// the matching pool index (paths relative to `dir`).
    pub fn write_pools(spec: &FixtureSpec, dir: &Path) -> Result<PoolIndex> {
        let mut entries = Vec::new();
        for_each_clip(spec, |split, class, name, audio, metadata| {
            let path = dir.join(&name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_wav(&path, audio, WavEncoding::Pcm16)?;
            if let Some(meta) = &metadata {
                let sidecar = path.with_extension("json");
                let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
                std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
            }
            entries.push(PoolEntry {
                path: name,
                class: class.as_str().to_string(),
                split,
                metadata,
            });
            Ok(())
        })?;
        Ok(PoolIndex {
            entries,
            sfx_grouping: SfxGrouping::default(),
        })
    }

    fn for_each_clip(
        spec: &FixtureSpec,
        mut sink: impl FnMut(Split, SoundClass, String, &AudioBuffer, Option<serde_json::Map<String, serde_json::Value>>) -> Result<()>,
    ) -> Result<()> {
        let genres = ["Rock", "Electronic", "Folk", "Jazz"];
        let fg_labels = ["Dog", "Door", "Knock", "Glass"];
        let bg_labels = ["Traffic", "Rain", "Wind", "Crowd"];
        for (si, split) in [Split::Train, Split::Validation, Split::Test].into_iter().enumerate() {
            for class in SoundClass::ALL {
                let stream = (si * 4 + class as usize) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(stream);
                for i in 0..spec.clips_per_split[si] {
                    let (mut x, peak) = match class {
                        SoundClass::Music => (music_clip(&mut rng, spec.sample_rate), 0.5),
                        SoundClass::Speech => (speech_clip(&mut rng, spec.sample_rate), 0.7),
                        SoundClass::SfxFg => (sfx_fg_clip(&mut rng, spec.sample_rate), 0.6),
                        SoundClass::SfxBg => (sfx_bg_clip(&mut rng, spec.sample_rate), 0.3),
                    };
                    normalize(&mut x, peak);
                    let mut meta = serde_json::Map::new();
                    match class {
                        SoundClass::Music => {
                            meta.insert("genre".into(), genres[i % genres.len()].into());
                        }
                        SoundClass::Speech => {
                            meta.insert("transcript".into(), format!("SYNTHETIC UTTERANCE {i}").into());
                        }
                        SoundClass::SfxFg => {
                            meta.insert("labels".into(), vec![fg_labels[i % fg_labels.len()]].into());
                        }
                        SoundClass::SfxBg => {
                            meta.insert("labels".into(), vec![bg_labels[i % bg_labels.len()]].into());
                        }
                    }
                    let name = format!("{}/{}/{}_{:03}.wav", split.as_str(), class, class, i);
                    let audio = AudioBuffer::from_f64(&x, spec.sample_rate)?;
                    sink(split, class, name, &audio, Some(meta))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_pool() -> ClipPool {
        let spec = FixtureSpec {
            sample_rate: 8000,
            clips_per_split: [6, 0, 0],
            seed: 3,
        };
        build_pools(&spec).unwrap().remove(&Split::Train).unwrap()
    }

    fn small_config() -> MixConfig {
        MixConfig {
            duration_s: 20.0,
            sample_rate: 8000,
            ..MixConfig::default()
        }
    }

    #[test]
    fn ztp_point_mass_small_lambda() {
        // P(1) for lambda = 0.5
        let p1 = 0.5 * (-0.5f64).exp() / (1.0 - (-0.5f64).exp());
        assert!((p1 - 0.7707).abs() < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_ztp(0.5, &mut rng) == 1).count();
        let se = (p1 * (1.0 - p1) / n as f64).sqrt();
        assert!(((ones as f64 / n as f64) - p1).abs() < 4.0 * se);
    }

    #[test]
    fn ztp_tiny_lambda_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert_eq!(sample_ztp(1e-9, &mut rng), 1);
        }
    }

    #[test]
    fn ztp_mean_closed_form() {
        assert!((ztp_mean(7.0) - 7.006_39).abs() < 1e-4);
    }

    #[test]
    fn tiny_lambda_places_one_clip() {
        let pool = small_pool();
        let mut cfg = small_config();
        let mut profile = cfg.profile(SoundClass::Music).unwrap().clone();
        profile.lambda = 1e-6;
        cfg.gap_fraction = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ev = plan_class_track(&profile, pool.of(SoundClass::Music), &cfg, &mut rng).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn speech_uses_whole_utterances() {
        let pool = small_pool();
        let cfg = small_config();
        let rate = cfg.sample_rate as usize;
        let profile = cfg.profile(SoundClass::Speech).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let ev = plan_class_track(profile, pool.of(SoundClass::Speech), &cfg, &mut rng).unwrap();
            for e in &ev {
                let full = pool.of(SoundClass::Speech)[e.clip].audio.len();
                assert_eq!(e.clip_start, 0);
                let truncated = e.onset + e.len == 20 * rate;
                assert!(e.len == full || truncated);
            }
            for w in ev.windows(2) {
                assert!(w[0].onset + w[0].len <= w[1].onset);
            }
        }
    }

    #[test]
    fn empty_pool_names_class() {
        let pool = ClipPool::new(8000);
        let cfg = small_config();
        match plan_mixture(&pool, &cfg, 1, 0, "m") {
            Err(Error::Validation { field, message }) => {
                assert_eq!(field, "pools.music");
                assert!(message.contains("music"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skipped_sfx_gives_silent_stem() {
        let pool = small_pool();
        let mut cfg = small_config();
        cfg.profiles.retain(|p| !matches!(p.class, SoundClass::SfxFg | SoundClass::SfxBg));
        let r = render(&plan_mixture(&pool, &cfg, 9, 0, "m").unwrap(), &pool).unwrap();
        assert!(r.stems[2].samples().iter().all(|&v| v == 0.0));
        r.manifest.validate().unwrap();
    }

    #[test]
    fn render_is_exact_and_deterministic() {
        let pool = small_pool();
        let cfg = small_config();
        let a = render(&plan_mixture(&pool, &cfg, 11, 3, "m3").unwrap(), &pool).unwrap();
        let b = render(&plan_mixture(&pool, &cfg, 11, 3, "m3").unwrap(), &pool).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.manifest, b.manifest);
        for i in 0..a.mixture.len() {
            let s = a.stems[0].samples()[i] + a.stems[1].samples()[i] + a.stems[2].samples()[i];
            assert_eq!(a.mixture.samples()[i] - s, 0.0);
        }
        a.manifest.validate().unwrap();
        let c = render(&plan_mixture(&pool, &cfg, 11, 4, "m4").unwrap(), &pool).unwrap();
        assert_ne!(a.mixture, c.mixture);
    }

    #[test]
    fn levels_hit_targets_without_jitter() {
        let pool = small_pool();
        let mut cfg = small_config();
        for p in cfg.profiles.iter_mut() {
            p.clip_jitter_lu = 0.0;
        }
        let recipe = plan_mixture(&pool, &cfg, 21, 0, "m").unwrap();
        for ev in &recipe.events {
            assert!((ev.gain_db - (recipe.class_lufs[&ev.class] - ev.measured_lufs)).abs() < 1e-12);
        }
        let subs = render_class_submixes(&recipe, &pool);
        for (class, sub) in subs {
            let measured = integrated_lufs_samples(&sub, 8000).unwrap().lufs().unwrap();
            assert!((measured - recipe.class_lufs[&class]).abs() < 0.5, "{class}: {measured}");
        }
        let speech = recipe.class_lufs[&SoundClass::Speech];
        assert!((-19.0..=-15.0).contains(&speech));
    }

    #[test]
    fn gain_definition() {
        let cfg = MixConfig {
            profiles: vec![ClassMixProfile {
                mixture_jitter_lu: 0.0,
                clip_jitter_lu: 0.0,
                ..ClassMixProfile::new(SoundClass::Music, 7.0, -24.0)
            }],
            ..MixConfig::default()
        };
        let mut recipe = MixtureRecipe {
            mixture_id: "x".into(),
            seed: 0,
            stream: 0,
            duration_samples: 10,
            sample_rate: 44100,
            class_lufs: BTreeMap::new(),
            events: vec![PlannedEvent {
                class: SoundClass::Music,
                clip: 0,
                clip_start: 0,
                onset: 0,
                len: 10,
                measured_lufs: -30.0,
                gain_db: 0.0,
            }],
        };
        assign_levels(&mut recipe, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!((recipe.events[0].gain_db - 6.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_stats_single_event() {
        let m = AnnotationManifest {
            mixture_id: "a".into(),
            duration_s: 10.0,
            sample_rate: 8000,
            class_lufs: SoundClass::ALL.iter().map(|&c| (c, -20.0)).collect(),
            events: vec![Event {
                class: SoundClass::Speech,
                source_file: "s.wav".into(),
                source_start_s: 0.0,
                onset_s: 0.0,
                offset_s: 10.0,
                gain_db: 0.0,
                metadata: None,
            }],
        };
        let s = corpus_overlap_stats(&[m], 1.0);
        assert_eq!(s.one_active, 1.0);
        assert_eq!(s.frames, 10);
    }

    #[test]
    fn pool_index_rejects_cross_split_files() {
        let idx = PoolIndex {
            entries: vec![
                PoolEntry {
                    path: "a.wav".into(),
                    class: "music".into(),
                    split: Split::Train,
                    metadata: None,
                },
                PoolEntry {
                    path: "a.wav".into(),
                    class: "music".into(),
                    split: Split::Test,
                    metadata: None,
                },
            ],
            sfx_grouping: SfxGrouping::default(),
        };
        assert!(idx.validate().is_err());
    }

    #[test]
    fn sfx_grouping_resolves_labels() {
        let g = SfxGrouping {
            foreground: ["Dog".to_string()].into(),
            background: ["Rain".to_string()].into(),
        };
        assert_eq!(g.classify(["Rain", "Dog"]), Some(SoundClass::SfxFg));
        assert_eq!(g.classify(["Rain"]), Some(SoundClass::SfxBg));
        assert_eq!(g.classify(["Guitar"]), None);
    }

    #[test]
    fn directory_ingestion_and_trim() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            sample_rate: 8000,
            clips_per_split: [2, 1, 0],
            seed: 1,
        };
        let written = write_pools(&spec, dir.path()).unwrap();
        let scanned = PoolIndex::from_directory(dir.path()).unwrap();
        assert_eq!(scanned.entries.len(), written.entries.len());
        let pool = ClipPool::load(&scanned, Split::Train, dir.path(), 8000).unwrap();
        let speech = &pool.of(SoundClass::Speech)[0];
        // fixture utterances carry 0.25 s of leading silence
        assert!((speech.trim_offset_s - 0.25).abs() < 0.02, "{}", speech.trim_offset_s);
        assert!(speech.metadata.as_ref().unwrap().contains_key("transcript"));
    }
}
