use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::stft::hann_window;
use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

const WINDOW: usize = 2048;
const SYNTH_HOP: usize = 512;

pub const MIN_STRETCH: f64 = 0.25;
pub const MAX_STRETCH: f64 = 4.0;

fn wrap_phase(x: f64) -> f64 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

/// Phase-vocoder time stretch to exactly `target_length` samples, preserving
/// pitch. A target equal to the current length returns the clip unchanged.
pub fn time_stretch(clip: &AudioClip, target_length: usize) -> Result<AudioClip> {
    clip.validate()?;
    let n = clip.len();
    let ratio = target_length as f64 / n as f64;
    if !(MIN_STRETCH..=MAX_STRETCH).contains(&ratio) {
        return Err(Error::StretchRatio { ratio });
    }
    if target_length == n {
        return Ok(clip.clone());
    }
    if n < WINDOW {
        return Err(Error::invalid(format!(
            "time stretch needs at least {WINDOW} samples, got {n}"
        )));
    }

    let analysis_hop = SYNTH_HOP as f64 * n as f64 / target_length as f64;
    let half = (WINDOW / 2) as isize;
    let frames = target_length.div_ceil(SYNTH_HOP) + 1;
    let bins = WINDOW / 2 + 1;
    let window = hann_window(WINDOW);

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(WINDOW);
    let inverse = planner.plan_fft_inverse(WINDOW);

    let omega: Vec<f64> = (0..bins).map(|k| 2.0 * PI * k as f64 / WINDOW as f64).collect();
    let mut prev_phase = vec![0.0; bins];
    let mut synth_phase = vec![0.0; bins];
    let mut prev_pos = 0isize;

    let out_len = (frames - 1) * SYNTH_HOP + WINDOW;
    let mut out = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];

    for i in 0..frames {
        let pos = (i as f64 * analysis_hop).round() as isize;
        for (j, slot) in buf.iter_mut().enumerate() {
            let idx = pos - half + j as isize;
            let s = if idx >= 0 && (idx as usize) < n {
                clip.samples[idx as usize] as f64
            } else {
                0.0
            };
            *slot = Complex::new(s * window[j], 0.0);
        }
        forward.process(&mut buf);

        let advance = (pos - prev_pos) as f64;
        for k in 0..bins {
            let phase = buf[k].arg();
            if i == 0 || advance <= 0.0 {
                synth_phase[k] = phase;
            } else {
                let deviation = wrap_phase(phase - prev_phase[k] - omega[k] * advance);
                let inst = omega[k] + deviation / advance;
                synth_phase[k] += inst * SYNTH_HOP as f64;
            }
            prev_phase[k] = phase;
        }
        prev_pos = pos;

        for k in 0..bins {
            let c = Complex::from_polar(buf[k].norm(), synth_phase[k]);
            buf[k] = c;
            if k > 0 && k < WINDOW / 2 {
                buf[WINDOW - k] = c.conj();
            }
        }
        // DC and Nyquist bins of a real signal are real-valued
        buf[0] = Complex::new(buf[0].re, 0.0);
        buf[WINDOW / 2] = Complex::new(buf[WINDOW / 2].re, 0.0);
        inverse.process(&mut buf);

        let start = i * SYNTH_HOP;
        for j in 0..WINDOW {
            let w = window[j];
            out[start + j] += buf[j].re / WINDOW as f64 * w;
            norm[start + j] += w * w;
        }
    }

    let offset = WINDOW / 2;
    let samples = (0..target_length)
        .map(|s| {
            let idx = s + offset;
            if idx < out_len && norm[idx] > 1e-8 {
                (out[idx] / norm[idx]) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        source_path: clip.source_path.clone(),
    })
}
