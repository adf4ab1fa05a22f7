//! Signal path: framed STFT, mel filterbank with log compression, and a
//! phase-vocoder time stretcher.

mod mel;
mod stft;
mod vocoder;

pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelSpectrogram, LOG_FLOOR, N_MELS};
pub use stft::{hann_window, stft_magnitude, StftFrameSpec};
pub use vocoder::{time_stretch, MAX_STRETCH, MIN_STRETCH};
