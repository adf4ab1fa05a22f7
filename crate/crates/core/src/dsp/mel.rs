use serde::{Deserialize, Serialize};

use super::stft::{stft_magnitude, StftFrameSpec};
use crate::audio_io::{AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const N_MELS: usize = 80;

/// Power floor applied before the natural log.
pub const LOG_FLOOR: f64 = 1e-5;

/// Log-power mel spectrogram, `bands × frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub sample_rate: u32,
    pub frame_spec: StftFrameSpec,
    pub source_id: String,
}

impl MelSpectrogram {
    pub fn bands(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    /// Keeps the first `frames` frames.
    pub fn crop_frames(&self, frames: usize) -> Result<Self> {
        if frames > self.frames() {
            return Err(Error::invalid(format!(
                "cannot crop {} frames to {frames}",
                self.frames()
            )));
        }
        let mut values = Matrix::zeros(self.bands(), frames);
        for b in 0..self.bands() {
            values.row_mut(b).copy_from_slice(&self.values.row(b)[..frames]);
        }
        Ok(Self {
            values,
            sample_rate: self.sample_rate,
            frame_spec: self.frame_spec,
            source_id: self.source_id.clone(),
        })
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank (`n_mels × n_fft_bins`), each row scaled to a
/// peak of 1 over the FFT bins it covers.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft_bins: usize,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<Matrix> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(Error::invalid(format!(
            "mel range must satisfy 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]"
        )));
    }
    if n_mels == 0 || n_fft_bins < 2 {
        return Err(Error::invalid("filterbank needs n_mels >= 1 and n_fft_bins >= 2"));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_fft = 2 * (n_fft_bins - 1);
    let bin_hz = sample_rate as f64 / n_fft as f64;

    let mut fb = Matrix::zeros(n_mels, n_fft_bins);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            *w = rise.min(fall).max(0.0);
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            row.iter_mut().for_each(|w| *w /= peak);
        }
    }
    Ok(fb)
}

/// 80-band log-power mel spectrogram of a 44.1 kHz clip.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    if clip.sample_rate != CANONICAL_RATE {
        return Err(Error::invalid(format!(
            "mel rendering expects {CANONICAL_RATE} Hz, got {}",
            clip.sample_rate
        )));
    }
    let spec = StftFrameSpec::default();
    let magnitude = stft_magnitude(clip, spec)?;
    let fb = mel_filterbank(clip.sample_rate, spec.bin_count(), N_MELS, 0.0, clip.sample_rate as f64 / 2.0)?;
    let frames = magnitude.cols();

    let mut values = Matrix::zeros(N_MELS, frames);
    let mut power = vec![0.0; frames];
    for m in 0..N_MELS {
        power.iter_mut().for_each(|p| *p = 0.0);
        for (k, &w) in fb.row(m).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (p, &mag) in power.iter_mut().zip(magnitude.row(k)) {
                *p += w * mag * mag;
            }
        }
        for (out, &p) in values.row_mut(m).iter_mut().zip(&power) {
            *out = p.max(LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        sample_rate: clip.sample_rate,
        frame_spec: spec,
        source_id: clip
            .source_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
    })
}
