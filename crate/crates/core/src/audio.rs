//! Mono audio buffers and WAV file I/O.

use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_SAMPLE_RATE: u32 = 8_000;
pub const MAX_SAMPLE_RATE: u32 = 192_000;

/// A mono signal at a fixed sample rate. Samples are nominally in [-1, 1]
/// and always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

pub fn check_sample_rate(rate: u32) -> Result<u32> {
    if (MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&rate) {
        Ok(rate)
    } else {
        Err(Error::InvalidSampleRate(rate))
    }
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        check_sample_rate(sample_rate)?;
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a buffer from double-precision samples, rounding to `f32`.
    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f32).collect(), sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copies `[start, start + len)`, zero-filling anything past the end.
    pub fn excerpt(&self, start: usize, len: usize) -> AudioBuffer {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        AudioBuffer {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }
}

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl std::str::FromStr for WavEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavEncoding::Pcm16),
            "float32" => Ok(WavEncoding::Float32),
            other => Err(Error::validation(
                "encoding",
                format!("unknown WAV encoding {other:?} (expected pcm16 or float32)"),
            )),
        }
    }
}

fn map_hound_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Error::Format {
            path: path.into(),
            message: "unexpected end of file".into(),
        },
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(m) => Error::Format {
            path: path.into(),
            message: m.into(),
        },
        hound::Error::Unsupported => Error::Unsupported {
            path: path.into(),
            message: "format not supported".into(),
        },
        other => Error::Format {
            path: path.into(),
            message: other.to_string(),
        },
    }
}

/// Reads a PCM16 or IEEE float32 WAV file, averaging stereo to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Unsupported {
            path: path.into(),
            message: format!("{channels} channels (only mono and stereo are read)"),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported {
                path: path.into(),
                message: format!("{fmt:?} with {bits} bits per sample"),
            })
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|f| ((f[0] as f64 + f[1] as f64) * 0.5) as f32)
            .collect()
    };
    check_sample_rate(spec.sample_rate)?;
    AudioBuffer::new(samples, spec.sample_rate).map_err(|e| match e {
        Error::NonFinite(i) => Error::Format {
            path: path.into(),
            message: format!("non-finite sample at index {i}"),
        },
        other => other,
    })
}

/// Converts a sample to PCM16 with clipping to the representable range.
pub fn to_pcm16(sample: f32) -> i16 {
    (sample as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_error(path, e))?;
    for &s in &buffer.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => writer.write_sample(to_pcm16(s)),
            WavEncoding::Float32 => writer.write_sample(s),
        };
        res.map_err(|e| map_hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound_error(path, e))
}
