//! WAV decoding/encoding, stereo downmix and band-limited resampling.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Canonical sample rate of the toolkit.
pub const CANONICAL_RATE: u32 = 44_100;

/// Mono audio buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_path: Option<PathBuf>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_path: None,
        })
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.samples.is_empty() {
            return Err(Error::invalid("clip has no samples"));
        }
        Ok(())
    }
}

fn wav_err(path: &Path, cause: impl std::fmt::Display) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        cause: cause.to_string(),
    }
}

/// Decodes a PCM16, PCM24 or float32 WAV file with one or two channels.
///
/// Integer samples are scaled by `2^(bits-1)`; stereo is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader =
        hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(wav_err(
            path,
            format!("unsupported channel count {}", spec.channels),
        ));
    }
    if spec.sample_rate == 0 {
        return Err(wav_err(path, "sample rate is zero"));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) | (hound::SampleFormat::Int, 24) => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (format, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported sample format {format:?} at {bits} bits"),
            ))
        }
    };

    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| downmix(lr[0], lr[1]))
            .collect()
    } else {
        interleaved
    };
    if samples.is_empty() {
        return Err(wav_err(path, "no audio frames"));
    }
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        source_path: Some(path.to_path_buf()),
    })
}

#[inline]
fn downmix(left: f32, right: f32) -> f32 {
    ((left as f64 + right as f64) * 0.5) as f32
}

/// Quantizes a sample to PCM16 after clamping to [-1, 1].
#[inline]
pub fn quantize_pcm16(x: f32) -> i16 {
    let v = (x.clamp(-1.0, 1.0) as f64 * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Encodes `clip` as 16-bit mono PCM.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    clip.validate()?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(path, other),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

const SINC_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel
/// (beta 8, 32 taps per side). Equal rates return the clip unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    clip.validate()?;
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let in_rate = clip.sample_rate as f64;
    let out_rate = target_rate as f64;
    let out_len = (clip.len() as f64 * out_rate / in_rate).round() as usize;
    let cutoff = (out_rate / in_rate).min(1.0);
    let norm_i0 = bessel_i0(KAISER_BETA);
    let half = SINC_TAPS as f64;
    let input = &clip.samples;
    let n = input.len() as isize;

    let samples = (0..out_len)
        .map(|j| {
            let t = j as f64 * in_rate / out_rate;
            let base = t.floor() as isize;
            let mut acc = 0.0f64;
            for k in (base - SINC_TAPS as isize + 1)..=(base + SINC_TAPS as isize) {
                if k < 0 || k >= n {
                    continue;
                }
                let x = t - k as f64;
                let r = x / half;
                if r.abs() > 1.0 {
                    continue;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm_i0;
                acc += input[k as usize] as f64 * cutoff * sinc(cutoff * x) * window;
            }
            acc as f32
        })
        .collect();

    Ok(AudioClip {
        samples,
        sample_rate: target_rate,
        source_path: clip.source_path.clone(),
    })
}
