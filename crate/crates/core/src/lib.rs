//! Evaluation toolkit for one-bar drum loop generators.
//!
//! The crate covers the whole path from raw recordings to metric values:
//!
//! - [`audio_io`]: WAV decode/encode, downmix and resampling.
//! - [`dsp`]: STFT, mel filterbank and phase-vocoder time stretching.
//! - [`prep`]: slicing recordings into bars, tempo normalization and fixed
//!   80×320 mel tensors.
//! - [`features`]: mel-statistics embeddings, a softmax classifier for class
//!   posteriors and ingestion of externally computed arrays.
//! - [`metrics`]: Inception Score and Fréchet Audio Distance.
//! - [`diversity`]: K-means binning, NDB and JSD.
//! - [`synthloop`]: a seeded procedural drum loop generator for exercising the
//!   pipeline end to end.
//! - [`arrays`]: flat-array entry points for foreign callers.
//!
//! Data-parallel loops run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential iteration otherwise; every result is
//! independent of the thread count.

pub mod arrays;
pub mod audio_io;
pub mod diversity;
pub mod dsp;
pub mod error;
pub mod features;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod prep;
pub mod rng;
pub mod synthloop;
pub mod tensorio;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Version string recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
