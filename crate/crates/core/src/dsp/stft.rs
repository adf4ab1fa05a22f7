use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// STFT framing: Hann window, reflect-padded by half a window at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftFrameSpec {
    pub window_size: usize,
    pub hop_size: usize,
}

impl Default for StftFrameSpec {
    fn default() -> Self {
        Self {
            window_size: 1024,
            hop_size: 275,
        }
    }
}

impl StftFrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || self.hop_size == 0 || self.hop_size > self.window_size {
            return Err(Error::invalid(format!(
                "invalid frame spec: window {} hop {}",
                self.window_size, self.hop_size
            )));
        }
        Ok(())
    }

    /// Frame count for `n` input samples under centering.
    pub fn frame_count(&self, n: usize) -> usize {
        n / self.hop_size + 1
    }

    pub fn bin_count(&self) -> usize {
        self.window_size / 2 + 1
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `n` under repeated reflection (no edge repeat).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Magnitude STFT as a `bins × frames` matrix.
pub fn stft_magnitude(clip: &AudioClip, spec: StftFrameSpec) -> Result<Matrix> {
    clip.validate()?;
    spec.validate()?;
    let n = clip.len();
    let win = spec.window_size;
    let pad = (win / 2) as isize;
    let frames = spec.frame_count(n);
    let bins = spec.bin_count();
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);

    let mut out = Matrix::zeros(bins, frames);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = (t * spec.hop_size) as isize - pad;
        for (j, slot) in buf.iter_mut().enumerate() {
            let s = clip.samples[reflect_index(start + j as isize, n)] as f64;
            *slot = Complex::new(s * window[j], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(bins).enumerate() {
            out.set(k, t, c.norm());
        }
    }
    Ok(out)
}
