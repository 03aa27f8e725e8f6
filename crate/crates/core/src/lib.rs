//! Building blocks for three-stem soundtrack separation: audio I/O, STFT and
//! loudness DSP, speech/music/effects mixture synthesis, and evaluation metrics.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod mixgen;
pub mod resample;

pub use audio::{AudioBuffer, WavEncoding};
pub use error::{Error, Result};
pub use manifest::{AnnotationManifest, Event, SoundClass};
