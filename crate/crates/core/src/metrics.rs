//! Separation metrics: SI-SDR, SI-SDR improvement, predicted energy at
//! silence (PES), segmental overlap-scenario analysis and the oracle
//! phase-sensitive filter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::{istft, rms_db, stft, StftConfig};
use crate::error::{Error, Result};
use crate::manifest::{AnnotationManifest, Stem};

/// Guard used in SI-SDR and PES: caps perfect estimates near +80 dB and
/// floors silent estimates at -80 dB.
pub const EPS: f64 = 1e-8;
/// Stem segments quieter than this are treated as inactive.
pub const ACTIVITY_FLOOR_DB: f64 = -60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::LengthMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = dot(reference, reference);
    if ref_energy <= EPS {
        return Err(Error::SilentReference(ref_energy));
    }
    let alpha = dot(estimate, reference) / ref_energy;
    let target = alpha * alpha * ref_energy;
    let distortion: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (alpha * r - e).powi(2))
        .sum();
    if target == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (target / (distortion + EPS * target)).log10())
}

pub fn si_sdr_improvement(estimate: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(estimate, reference)? - si_sdr(mixture, reference)?)
}

/// Predicted energy at silence: `10 log10(mean(x^2) + eps)`.
pub fn pes(estimate: &[f64]) -> f64 {
    let mean = if estimate.is_empty() {
        0.0
    } else {
        dot(estimate, estimate) / estimate.len() as f64
    };
    10.0 * (mean + EPS).log10()
}

/// Which sources are active in one segment, in (music, speech, sfx) order.
pub type Activity = [bool; 3];

/// The seven non-silent activity patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "MSX")]
    Msx,
    #[serde(rename = "SX")]
    Sx,
    #[serde(rename = "MX")]
    Mx,
    #[serde(rename = "MS")]
    Ms,
    #[serde(rename = "M")]
    M,
    #[serde(rename = "S")]
    S,
    #[serde(rename = "X")]
    X,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Msx,
        Scenario::Sx,
        Scenario::Mx,
        Scenario::Ms,
        Scenario::M,
        Scenario::S,
        Scenario::X,
    ];

    pub fn from_activity(a: Activity) -> Option<Scenario> {
        Some(match a {
            [true, true, true] => Scenario::Msx,
            [false, true, true] => Scenario::Sx,
            [true, false, true] => Scenario::Mx,
            [true, true, false] => Scenario::Ms,
            [true, false, false] => Scenario::M,
            [false, true, false] => Scenario::S,
            [false, false, true] => Scenario::X,
            [false, false, false] => return None,
        })
    }

    pub fn activity(self) -> Activity {
        match self {
            Scenario::Msx => [true, true, true],
            Scenario::Sx => [false, true, true],
            Scenario::Mx => [true, false, true],
            Scenario::Ms => [true, true, false],
            Scenario::M => [true, false, false],
            Scenario::S => [false, true, false],
            Scenario::X => [false, false, true],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Msx => "MSX",
            Scenario::Sx => "SX",
            Scenario::Mx => "MX",
            Scenario::Ms => "MS",
            Scenario::M => "M",
            Scenario::S => "S",
            Scenario::X => "X",
        }
    }

    /// Quantity reported for `stem` under this pattern.
    pub fn cell_kind(self, stem: Stem) -> CellKind {
        let a = self.activity();
        if !a[stem.index()] {
            CellKind::Pes
        } else if a.iter().filter(|&&x| x).count() == 1 {
            CellKind::Absolute
        } else {
            CellKind::Improvement
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// SI-SDR improvement over the mixture; target overlaps another source.
    Improvement,
    /// Final SI-SDR; target is the only active source.
    Absolute,
    /// Predicted energy at silence; target inactive.
    Pes,
}

impl CellKind {
    pub fn marker(self) -> &'static str {
        match self {
            CellKind::Improvement => "",
            CellKind::Absolute => "*",
            CellKind::Pes => "†",
        }
    }
}

/// Per-segment activity: a class is active when an annotated event of that
/// class intersects the half-open segment and, when stems are given, the
/// stem's segment RMS exceeds -60 dBFS. Trailing partial segments are
/// dropped.
pub fn segment_activity(
    manifest: &AnnotationManifest,
    references: Option<&[Vec<f64>]>,
    segment_s: f64,
) -> Vec<Activity> {
    let rate = manifest.sample_rate as f64;
    let seg_len = (segment_s * rate).round() as usize;
    let count = match references {
        Some(refs) => refs.iter().map(Vec::len).min().unwrap_or(0) / seg_len.max(1),
        None => (manifest.duration_s / segment_s + 1e-9).floor() as usize,
    };
    (0..count)
        .map(|k| {
            let (lo, hi) = (k as f64 * segment_s, (k + 1) as f64 * segment_s);
            let mut act = [false; 3];
            for e in &manifest.events {
                if e.onset_s < hi && e.offset_s > lo {
                    act[e.class.stem().index()] = true;
                }
            }
            if let Some(refs) = references {
                for (j, r) in refs.iter().enumerate() {
                    if act[j] && rms_db(&r[k * seg_len..(k + 1) * seg_len]) <= ACTIVITY_FLOOR_DB {
                        act[j] = false;
                    }
                }
            }
            act
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalScore {
    /// Mean SI-SDR over tracks where the reference is not silent.
    pub si_sdr_db: Option<f64>,
    pub si_sdri_db: Option<f64>,
    /// Tracks contributing to the means.
    pub tracks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    /// Mean over contributing segments; `None` when the scenario is empty.
    pub value_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCells {
    pub frames: usize,
    pub cells: BTreeMap<Stem, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub global: BTreeMap<Stem, GlobalScore>,
    pub scenarios: BTreeMap<Scenario, ScenarioCells>,
    pub segment_s: f64,
    /// Segment counts per scenario label plus `"silent"`.
    pub frame_counts: BTreeMap<String, usize>,
}

fn weighted_mean(a: Option<f64>, na: usize, b: Option<f64>, nb: usize) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x * na as f64 + y * nb as f64) / (na + nb) as f64),
        (Some(x), None) => Some(x),
        (None, y) => y,
    }
}

impl EvalReport {
    fn empty(segment_s: f64) -> Self {
        let scenarios = Scenario::ALL
            .iter()
            .map(|&s| {
                let cells = Stem::ALL
                    .iter()
                    .map(|&st| {
                        (
                            st,
                            Cell {
                                kind: s.cell_kind(st),
                                value_db: None,
                            },
                        )
                    })
                    .collect();
                (s, ScenarioCells { frames: 0, cells })
            })
            .collect();
        let mut frame_counts: BTreeMap<String, usize> =
            Scenario::ALL.iter().map(|s| (s.label().to_string(), 0)).collect();
        frame_counts.insert("silent".into(), 0);
        EvalReport {
            global: Stem::ALL
                .iter()
                .map(|&s| {
                    (
                        s,
                        GlobalScore {
                            si_sdr_db: None,
                            si_sdri_db: None,
                            tracks: 0,
                        },
                    )
                })
                .collect(),
            scenarios,
            segment_s,
            frame_counts,
        }
    }

    pub fn total_segments(&self) -> usize {
        self.frame_counts.values().sum()
    }

    /// Combines reports from different tracks: global scores are averaged
    /// per track, scenario cells weighted by their frame counts.
    pub fn merge(&self, other: &EvalReport) -> EvalReport {
        let mut out = self.clone();
        for (stem, g) in out.global.iter_mut() {
            let o = &other.global[stem];
            g.si_sdr_db = weighted_mean(g.si_sdr_db, g.tracks, o.si_sdr_db, o.tracks);
            g.si_sdri_db = weighted_mean(g.si_sdri_db, g.tracks, o.si_sdri_db, o.tracks);
            g.tracks += o.tracks;
        }
        for (scenario, sc) in out.scenarios.iter_mut() {
            let o = &other.scenarios[scenario];
            for (stem, cell) in sc.cells.iter_mut() {
                cell.value_db = weighted_mean(cell.value_db, sc.frames, o.cells[stem].value_db, o.frames);
            }
            sc.frames += o.frames;
        }
        for (k, v) in out.frame_counts.iter_mut() {
            *v += other.frame_counts.get(k).copied().unwrap_or(0);
        }
        out
    }

    /// Plain-text table: one row per source, one column per scenario.
    /// `*` marks final SI-SDR (sole active source), `†` marks PES.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "Source");
        for sc in Scenario::ALL {
            let _ = write!(s, "{:>11}", format!("{{{}}}", sc.label()));
        }
        s.push('\n');
        let _ = write!(s, "{:<8}", "Frames");
        for sc in Scenario::ALL {
            let _ = write!(s, "{:>11}", self.scenarios[&sc].frames);
        }
        s.push('\n');
        for stem in Stem::ALL {
            let _ = write!(s, "{:<8}", stem.as_str());
            for sc in Scenario::ALL {
                let cell = &self.scenarios[&sc].cells[&stem];
                let text = match cell.value_db {
                    Some(v) => format!("{v:.2}{}", cell.kind.marker()),
                    None => "-".to_string(),
                };
                let _ = write!(s, "{:>11}", text);
            }
            s.push('\n');
        }
        s.push_str("\nGlobal (full-length)   SI-SDR   SI-SDRi\n");
        for stem in Stem::ALL {
            let g = &self.global[&stem];
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(s, "{:<22} {:>7} {:>9}", stem.as_str(), fmt(g.si_sdr_db), fmt(g.si_sdri_db));
        }
        s
    }
}

fn check_lengths(estimates: &[Vec<f64>], references: &[Vec<f64>], mixture: &[f64]) -> Result<()> {
    if estimates.len() != 3 || references.len() != 3 {
        return Err(Error::LengthMismatch(format!(
            "expected 3 estimates and 3 references, got {} and {}",
            estimates.len(),
            references.len()
        )));
    }
    for (name, sig) in estimates
        .iter()
        .map(|e| ("estimate", e))
        .chain(references.iter().map(|r| ("reference", r)))
    {
        if sig.len() != mixture.len() {
            return Err(Error::LengthMismatch(format!(
                "{name} has {} samples, mixture {}",
                sig.len(),
                mixture.len()
            )));
        }
    }
    Ok(())
}

/// Evaluates one track: full-length SI-SDR/SI-SDRi per source plus the
/// segmental seven-scenario table.
pub fn evaluate(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    mixture: &[f64],
    manifest: &AnnotationManifest,
    segment_s: f64,
) -> Result<EvalReport> {
    check_lengths(estimates, references, mixture)?;
    let mut report = EvalReport::empty(segment_s);
    for stem in Stem::ALL {
        let j = stem.index();
        if let Ok(score) = si_sdr(&estimates[j], &references[j]) {
            let base = si_sdr(mixture, &references[j])?;
            let g = report.global.get_mut(&stem).expect("all stems present");
            g.si_sdr_db = Some(score);
            g.si_sdri_db = Some(score - base);
            g.tracks = 1;
        }
    }
    let seg_len = (segment_s * manifest.sample_rate as f64).round() as usize;
    let activity = segment_activity(manifest, Some(references), segment_s);
    let mut sums: BTreeMap<(Scenario, Stem), f64> = BTreeMap::new();
    for (k, act) in activity.iter().enumerate() {
        let Some(scenario) = Scenario::from_activity(*act) else {
            *report.frame_counts.get_mut("silent").expect("silent key") += 1;
            continue;
        };
        *report.frame_counts.get_mut(scenario.label()).expect("scenario key") += 1;
        report.scenarios.get_mut(&scenario).expect("scenario").frames += 1;
        let range = k * seg_len..(k + 1) * seg_len;
        let mix = &mixture[range.clone()];
        for stem in Stem::ALL {
            let j = stem.index();
            let est = &estimates[j][range.clone()];
            let reference = &references[j][range.clone()];
            let value = match scenario.cell_kind(stem) {
                CellKind::Pes => pes(est),
                CellKind::Absolute => si_sdr(est, reference)?,
                CellKind::Improvement => si_sdr_improvement(est, reference, mix)?,
            };
            *sums.entry((scenario, stem)).or_insert(0.0) += value;
        }
    }
    for ((scenario, stem), total) in sums {
        let sc = report.scenarios.get_mut(&scenario).expect("scenario");
        let frames = sc.frames as f64;
        sc.cells.get_mut(&stem).expect("stem").value_db = Some(total / frames);
    }
    Ok(report)
}

/// Oracle phase-sensitive filter: `clamp(Re(X_j conj(Y)) / |Y|^2, 0, 1)`
/// applied to the mixture STFT.
pub fn oracle_psf(mixture: &[f64], references: &[Vec<f64>], config: &StftConfig) -> Result<Vec<Vec<f64>>> {
    let y = stft(mixture, config)?;
    references
        .iter()
        .map(|r| {
            if r.len() != mixture.len() {
                return Err(Error::LengthMismatch(format!(
                    "reference has {} samples, mixture {}",
                    r.len(),
                    mixture.len()
                )));
            }
            let x = stft(r, config)?;
            let mask: Vec<f64> = oracle_psf_mask(&x.bins, &y.bins);
            Ok(istft(&y.masked(&mask), mixture.len()))
        })
        .collect()
}

pub fn oracle_psf_mask(
    source: &[num_complex::Complex64],
    mixture: &[num_complex::Complex64],
) -> Vec<f64> {
    source
        .iter()
        .zip(mixture)
        .map(|(xs, ym)| {
            let power = ym.norm_sqr();
            if power <= 0.0 {
                0.0
            } else {
                ((xs * ym.conj()).re / power).clamp(0.0, 1.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{Event, SoundClass};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn si_sdr_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((si_sdr(&[2.0, 3.0, 4.0], &x).unwrap() - 18.239).abs() < 0.01);
        assert!(si_sdr(&x, &x).unwrap() >= 79.0);
        assert!(matches!(si_sdr(&[1.0], &[0.0]), Err(Error::SilentReference(_))));
        assert!(si_sdr(&[1.0, 2.0], &x).is_err());
    }

    proptest! {
        #[test]
        fn si_sdr_scale_and_sign_invariant(
            pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16..64),
            c in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let e: Vec<f64> = pairs.iter().map(|p| p.0 + 0.5 * p.1).collect();
            prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let base = si_sdr(&e, &x).unwrap();
            let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
            prop_assert!((si_sdr(&scaled, &x).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn pes_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(pes(&[lo; 32]) <= pes(&[hi; 32]));
        }
    }

    #[test]
    fn improvement_of_mixture_is_zero() {
        let x = [1.0, -0.5, 0.25, 0.8];
        let m = [1.3, -0.1, 0.2, 0.5];
        assert!(si_sdr_improvement(&m, &x, &m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn pes_examples() {
        assert!((pes(&[0.0; 10]) + 80.0).abs() < 1e-9);
        assert!(pes(&[1.0; 10]).abs() < 1e-6);
        assert!((pes(&[0.1; 10]) + 20.0).abs() < 1e-5);
    }

    fn ev(class: SoundClass, on: f64, off: f64) -> Event {
        Event {
            class,
            source_file: "f.wav".into(),
            source_start_s: 0.0,
            onset_s: on,
            offset_s: off,
            gain_db: 0.0,
            metadata: None,
        }
    }

    fn manifest(events: Vec<Event>, duration: f64, rate: u32) -> AnnotationManifest {
        AnnotationManifest {
            mixture_id: "t".into(),
            duration_s: duration,
            sample_rate: rate,
            class_lufs: SoundClass::ALL.iter().map(|&c| (c, -20.0)).collect(),
            events,
        }
    }

    #[test]
    fn activity_from_annotations() {
        let m = manifest(
            vec![
                ev(SoundClass::Speech, 0.0, 2.0),
                ev(SoundClass::Music, 1.5, 3.0),
                ev(SoundClass::SfxBg, 2.0, 2.5),
            ],
            4.0,
            8000,
        );
        let a = segment_activity(&m, None, 1.0);
        assert_eq!(
            a,
            vec![
                [false, true, false],
                [true, true, false],
                [true, false, true],
                [false, false, false]
            ]
        );
    }

    #[test]
    fn energy_guard_clears_silent_tails() {
        let m = manifest(vec![ev(SoundClass::Music, 0.0, 2.0)], 2.0, 8000);
        let mut music = vec![0.1; 16000];
        music[8000..].iter_mut().for_each(|v| *v = 0.0);
        let refs = vec![music, vec![0.0; 16000], vec![0.0; 16000]];
        let a = segment_activity(&m, Some(&refs), 1.0);
        assert_eq!(a, vec![[true, false, false], [false, false, false]]);
    }

    #[test]
    fn cell_kinds_follow_pattern() {
        assert_eq!(Scenario::Msx.cell_kind(Stem::Music), CellKind::Improvement);
        assert_eq!(Scenario::S.cell_kind(Stem::Speech), CellKind::Absolute);
        assert_eq!(Scenario::Sx.cell_kind(Stem::Music), CellKind::Pes);
        for a in 1u8..8 {
            let act = [a & 1 != 0, a & 2 != 0, a & 4 != 0];
            assert_eq!(Scenario::from_activity(act).unwrap().activity(), act);
        }
    }

    fn random_fixture(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, AnnotationManifest) {
        let rate = 8000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let secs = 8;
        let mut refs = vec![vec![0.0; secs * rate]; 3];
        let mut events = Vec::new();
        let classes = [SoundClass::Music, SoundClass::Speech, SoundClass::SfxFg];
        for (j, class) in classes.iter().enumerate() {
            let on = rng.random_range(0..4) as f64;
            let off = on + rng.random_range(2..5) as f64;
            events.push(ev(*class, on, off));
            for t in (on as usize * rate)..(off as usize * rate) {
                refs[j][t] = rng.random_range(-0.3..0.3);
            }
        }
        let mix: Vec<f64> = (0..secs * rate).map(|t| refs.iter().map(|r| r[t]).sum()).collect();
        (refs, mix, manifest(events, secs as f64, rate as u32))
    }

    #[test]
    fn identical_estimates_hit_cap_and_floor() {
        let (refs, mix, m) = random_fixture(1);
        let r = evaluate(&refs, &refs, &mix, &m, 1.0).unwrap();
        for sc in r.scenarios.values() {
            if sc.frames == 0 {
                continue;
            }
            for cell in sc.cells.values() {
                let v = cell.value_db.unwrap();
                match cell.kind {
                    CellKind::Pes => assert!((v + 80.0).abs() < 1e-9),
                    CellKind::Absolute => assert!(v > 79.0),
                    CellKind::Improvement => assert!(v > 0.0),
                }
            }
        }
        assert_eq!(r.total_segments(), 8);
    }

    #[test]
    fn mixture_estimates_have_zero_improvement() {
        let (refs, mix, m) = random_fixture(2);
        let est = vec![mix.clone(); 3];
        let r = evaluate(&est, &refs, &mix, &m, 1.0).unwrap();
        for sc in r.scenarios.values() {
            for cell in sc.cells.values() {
                if cell.kind == CellKind::Improvement {
                    if let Some(v) = cell.value_db {
                        assert!(v.abs() < 1e-9);
                    }
                }
            }
        }
        for g in r.global.values() {
            assert!(g.si_sdri_db.unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn length_mismatch_is_error() {
        let (refs, mix, m) = random_fixture(3);
        let mut est = refs.clone();
        est[1].pop();
        assert!(matches!(evaluate(&est, &refs, &mix, &m, 1.0), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn permutation_consistent() {
        let (refs, mix, m) = random_fixture(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let est: Vec<Vec<f64>> = refs
            .iter()
            .map(|r| r.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect())
            .collect();
        let base = evaluate(&est, &refs, &mix, &m, 1.0).unwrap();
        // swap music and speech, including their annotations
        let mut m2 = m.clone();
        for e in m2.events.iter_mut() {
            e.class = match e.class {
                SoundClass::Music => SoundClass::Speech,
                SoundClass::Speech => SoundClass::Music,
                c => c,
            };
        }
        let swap = |v: &Vec<Vec<f64>>| vec![v[1].clone(), v[0].clone(), v[2].clone()];
        let r = evaluate(&swap(&est), &swap(&refs), &mix, &m2, 1.0).unwrap();
        assert_eq!(base.global[&Stem::Music], r.global[&Stem::Speech]);
        let swap_sc = |s: Scenario| {
            let a = s.activity();
            Scenario::from_activity([a[1], a[0], a[2]]).unwrap()
        };
        for sc in Scenario::ALL {
            let a = &base.scenarios[&sc];
            let b = &r.scenarios[&swap_sc(sc)];
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.cells[&Stem::Music], b.cells[&Stem::Speech]);
            assert_eq!(a.cells[&Stem::Sfx], b.cells[&Stem::Sfx]);
        }
    }

    #[test]
    fn merge_weights_by_frames() {
        let (refs, mix, m) = random_fixture(5);
        let a = evaluate(&refs, &refs, &mix, &m, 1.0).unwrap();
        let merged = a.merge(&a);
        assert_eq!(merged.total_segments(), 2 * a.total_segments());
        assert_eq!(merged.global[&Stem::Music].tracks, 2);
        for (sc, cells) in &merged.scenarios {
            for (stem, c) in &cells.cells {
                assert_eq!(c.value_db, a.scenarios[sc].cells[stem].value_db);
            }
        }
        let table = merged.to_table();
        assert!(table.contains("MSX"));
    }

    #[test]
    fn oracle_psf_single_source() {
        let rate = 16000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src: Vec<f64> = (0..rate).map(|_| rng.random_range(-0.5..0.5)).collect();
        let refs = vec![src.clone(), vec![0.0; rate as usize], vec![0.0; rate as usize]];
        let cfg = StftConfig::new(32.0, 128, rate as u32).unwrap();
        let out = oracle_psf(&src, &refs, &cfg).unwrap();
        assert!(si_sdr(&out[0], &src).unwrap() > 30.0);
        assert!(out[1].iter().all(|&v| v == 0.0));
    }
}
