//! JSON annotation manifests describing one rendered mixture.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four mixing classes. The two effect classes are rendered into a
/// single effects stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundClass {
    Music,
    Speech,
    SfxFg,
    SfxBg,
}

impl SoundClass {
    pub const ALL: [SoundClass; 4] = [
        SoundClass::Music,
        SoundClass::Speech,
        SoundClass::SfxFg,
        SoundClass::SfxBg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SoundClass::Music => "music",
            SoundClass::Speech => "speech",
            SoundClass::SfxFg => "sfx_fg",
            SoundClass::SfxBg => "sfx_bg",
        }
    }

    /// Output stem this class is rendered into.
    pub fn stem(self) -> Stem {
        match self {
            SoundClass::Music => Stem::Music,
            SoundClass::Speech => Stem::Speech,
            SoundClass::SfxFg | SoundClass::SfxBg => Stem::Sfx,
        }
    }
}

impl fmt::Display for SoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SoundClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SoundClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::validation("class", format!("unknown class {s:?} (expected music, speech, sfx_fg or sfx_bg)"))
            })
    }
}

/// The three separation targets, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stem {
    Music,
    Speech,
    Sfx,
}

impl Stem {
    pub const ALL: [Stem; 3] = [Stem::Music, Stem::Speech, Stem::Sfx];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stem::Music => "music",
            Stem::Speech => "speech",
            Stem::Sfx => "sfx",
        }
    }
}

impl fmt::Display for Stem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub class: SoundClass,
    pub source_file: String,
    pub source_start_s: f64,
    pub onset_s: f64,
    pub offset_s: f64,
    pub gain_db: f64,
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

impl Event {
    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    /// True when the half-open intervals `[onset, offset)` intersect.
    pub fn overlaps(&self, other: &Event) -> bool {
        self.onset_s < other.offset_s && other.onset_s < self.offset_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationManifest {
    pub mixture_id: String,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub class_lufs: BTreeMap<SoundClass, f64>,
    pub events: Vec<Event>,
}

// Permissive mirror of the schema; every field is checked by `validate`.
#[derive(Deserialize)]
struct RawManifest {
    mixture_id: Option<String>,
    duration_s: Option<f64>,
    sample_rate: Option<u32>,
    class_lufs: Option<BTreeMap<String, f64>>,
    events: Option<Vec<RawEvent>>,
}

#[derive(Deserialize)]
struct RawEvent {
    class: Option<String>,
    source_file: Option<String>,
    source_start_s: Option<f64>,
    onset_s: Option<f64>,
    offset_s: Option<f64>,
    gain_db: Option<f64>,
    #[serde(default)]
    metadata: Option<serde_json::Value>,
}

fn required<T>(value: Option<T>, field: impl Into<String>) -> Result<T> {
    value.ok_or_else(|| Error::validation(field, "missing required field"))
}

impl TryFrom<RawManifest> for AnnotationManifest {
    type Error = Error;

    fn try_from(raw: RawManifest) -> Result<Self> {
        let mut class_lufs = BTreeMap::new();
        for (k, v) in required(raw.class_lufs, "class_lufs")? {
            let class: SoundClass = k
                .parse()
                .map_err(|_| Error::validation(format!("class_lufs.{k}"), "unknown class"))?;
            class_lufs.insert(class, v);
        }
        let mut events = Vec::new();
        for (i, e) in required(raw.events, "events")?.into_iter().enumerate() {
            let field = |name: &str| format!("events[{i}].{name}");
            let class_str = required(e.class, field("class"))?;
            let class = class_str.parse().map_err(|_| {
                Error::validation(field("class"), format!("unknown class {class_str:?}"))
            })?;
            let metadata = match e.metadata {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::Object(m)) => Some(m),
                Some(_) => return Err(Error::validation(field("metadata"), "must be an object or null")),
            };
            events.push(Event {
                class,
                source_file: required(e.source_file, field("source_file"))?,
                source_start_s: required(e.source_start_s, field("source_start_s"))?,
                onset_s: required(e.onset_s, field("onset_s"))?,
                offset_s: required(e.offset_s, field("offset_s"))?,
                gain_db: required(e.gain_db, field("gain_db"))?,
                metadata,
            });
        }
        let manifest = AnnotationManifest {
            mixture_id: required(raw.mixture_id, "mixture_id")?,
            duration_s: required(raw.duration_s, "duration_s")?,
            sample_rate: required(raw.sample_rate, "sample_rate")?,
            class_lufs,
            events,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

impl AnnotationManifest {
    /// Checks every documented invariant, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        if self.mixture_id.is_empty() {
            return Err(Error::validation("mixture_id", "must not be empty"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::validation("duration_s", "must be positive and finite"));
        }
        crate::audio::check_sample_rate(self.sample_rate)
            .map_err(|e| Error::validation("sample_rate", e.to_string()))?;
        for class in SoundClass::ALL {
            match self.class_lufs.get(&class) {
                None => return Err(Error::validation(format!("class_lufs.{class}"), "missing")),
                Some(v) if !v.is_finite() => {
                    return Err(Error::validation(format!("class_lufs.{class}"), "must be finite"))
                }
                _ => {}
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let field = |name: &str| format!("events[{i}].{name}");
            if !(e.onset_s.is_finite() && e.onset_s >= 0.0) {
                return Err(Error::validation(field("onset_s"), "must be finite and >= 0"));
            }
            if !(e.offset_s.is_finite() && e.offset_s > e.onset_s) {
                return Err(Error::validation(
                    field("offset_s"),
                    format!("offset {} must exceed onset {}", e.offset_s, e.onset_s),
                ));
            }
            if e.offset_s > self.duration_s {
                return Err(Error::validation(
                    field("offset_s"),
                    format!("offset {} exceeds mixture duration {}", e.offset_s, self.duration_s),
                ));
            }
            if !(e.source_start_s.is_finite() && e.source_start_s >= 0.0) {
                return Err(Error::validation(field("source_start_s"), "must be finite and >= 0"));
            }
            if !e.gain_db.is_finite() {
                return Err(Error::validation(field("gain_db"), "must be finite"));
            }
        }
        for class in SoundClass::ALL {
            let mut spans: Vec<(usize, &Event)> =
                self.events.iter().enumerate().filter(|(_, e)| e.class == class).collect();
            spans.sort_by(|a, b| a.1.onset_s.total_cmp(&b.1.onset_s));
            for w in spans.windows(2) {
                if w[0].1.overlaps(w[1].1) {
                    return Err(Error::validation(
                        format!("events[{}].onset_s", w[1].0),
                        format!("{class} event overlaps events[{}]", w[0].0),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn events_of(&self, class: SoundClass) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.class == class)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawManifest = serde_json::from_str(text).map_err(|e| Error::Validation {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        raw.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<AnnotationManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationManifest::from_json(&text)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &AnnotationManifest) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    std::fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn event(class: SoundClass, onset: f64, offset: f64) -> Event {
        Event {
            class,
            source_file: "clip.wav".into(),
            source_start_s: 0.0,
            onset_s: onset,
            offset_s: offset,
            gain_db: -3.0,
            metadata: None,
        }
    }

    fn manifest(events: Vec<Event>) -> AnnotationManifest {
        AnnotationManifest {
            mixture_id: "m0".into(),
            duration_s: 60.0,
            sample_rate: 44100,
            class_lufs: SoundClass::ALL.iter().map(|&c| (c, -20.0)).collect(),
            events,
        }
    }

    #[test]
    fn offset_before_onset_names_field() {
        let m = manifest(vec![event(SoundClass::Music, 0.0, 1.0), event(SoundClass::Speech, 5.0, 4.0)]);
        match AnnotationManifest::from_json(&m.to_json()) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "events[1].offset_s"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_class_names_field() {
        let text = manifest(vec![event(SoundClass::Music, 0.0, 1.0)])
            .to_json()
            .replace("\"class\": \"music\"", "\"class\": \"noise\"");
        match AnnotationManifest::from_json(&text) {
            Err(Error::Validation { field, message }) => {
                assert_eq!(field, "events[0].class");
                assert!(message.contains("noise"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_class_overlap_rejected_but_fg_bg_allowed() {
        let bad = manifest(vec![event(SoundClass::Music, 0.0, 2.0), event(SoundClass::Music, 1.0, 3.0)]);
        assert!(bad.validate().is_err());
        let touching = manifest(vec![event(SoundClass::Music, 0.0, 2.0), event(SoundClass::Music, 2.0, 3.0)]);
        assert!(touching.validate().is_ok());
        let fgbg = manifest(vec![event(SoundClass::SfxFg, 0.0, 2.0), event(SoundClass::SfxBg, 1.0, 3.0)]);
        assert!(fgbg.validate().is_ok());
    }

    #[test]
    fn offset_past_duration_rejected() {
        assert!(manifest(vec![event(SoundClass::Speech, 59.0, 60.5)]).validate().is_err());
    }

    #[test]
    fn missing_class_lufs_entry_rejected() {
        let mut m = manifest(vec![]);
        m.class_lufs.remove(&SoundClass::SfxBg);
        match m.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "class_lufs.sfx_bg"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut e = event(SoundClass::Speech, 1.25, 7.125);
        let mut meta = serde_json::Map::new();
        meta.insert("transcript".into(), "HELLO WORLD".into());
        e.metadata = Some(meta);
        let m = manifest(vec![e]);
        write_manifest(&p, &m).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
    }

    proptest! {
        #[test]
        fn json_round_trip(
            spans in prop::collection::vec((0.0f64..59.0, 0.001f64..1.0, -40.0f64..40.0), 0..8),
            lufs in -40.0f64..-5.0,
        ) {
            // one event per class slot, non-overlapping by construction
            let events: Vec<Event> = spans.iter().enumerate().map(|(i, &(on, len, g))| {
                let class = SoundClass::ALL[i % 4];
                let onset = on / 8.0 + (i / 4) as f64 * 30.0;
                let mut e = event(class, onset, onset + len);
                e.gain_db = g;
                e.source_start_s = on / 3.0;
                e
            }).collect();
            let mut m = manifest(events);
            m.class_lufs.insert(SoundClass::Speech, lufs);
            let back = AnnotationManifest::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
