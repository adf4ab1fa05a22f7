//! Entry points over flat row-major `f64` buffers, for callers that hold
//! plain numeric arrays (scripting bindings, foreign code). Shapes are
//! validated here; nothing is broadcast.

use serde::{Deserialize, Serialize};

use crate::diversity;
use crate::dsp::{MelSpectrogram, StftFrameSpec};
use crate::error::{Error, Result};
use crate::features::{self, PosteriorSet};
use crate::matrix::Matrix;
use crate::metrics;

fn view(data: &[f64], rows: usize, cols: usize, name: &'static str) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            what: name,
            expected: rows * cols,
            actual: data.len(),
        });
    }
    Matrix::from_vec(rows, cols, data.to_vec())
}

/// Inception Score `(mean, std)` of an `rows × classes` posterior buffer.
/// Rows are renormalized under the 1e-3 ingestion rule.
pub fn inception_score(data: &[f64], rows: usize, classes: usize, splits: usize, seed: u64) -> Result<(f64, f64)> {
    let mut m = view(data, rows, classes, "posteriors")?;
    features::renormalize_rows(&mut m).map_err(Error::InvalidInput)?;
    let names = (0..classes).map(|i| format!("class{i}")).collect();
    let set = PosteriorSet::new(m, names, "array")?;
    let r = metrics::inception_score(&set, splits, seed)?;
    Ok((r.mean, r.std))
}

/// FAD between Gaussians fitted to two `n × dim` embedding buffers.
pub fn frechet_distance(real: &[f64], real_rows: usize, fake: &[f64], fake_rows: usize, dim: usize) -> Result<f64> {
    let r = metrics::fit_gaussian(&view(real, real_rows, dim, "real embeddings")?)?;
    let g = metrics::fit_gaussian(&view(fake, fake_rows, dim, "fake embeddings")?)?;
    metrics::frechet_distance(&r, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    pub ndb: usize,
    pub ndb_over_k: f64,
    pub jsd: f64,
}

/// NDB and JSD of `fake` against a K-means binning of `real`.
#[allow(clippy::too_many_arguments)]
pub fn diversity(
    real: &[f64],
    real_rows: usize,
    fake: &[f64],
    fake_rows: usize,
    dim: usize,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<DiversitySummary> {
    let r = view(real, real_rows, dim, "real vectors")?.map(|v| v as f32);
    let g = view(fake, fake_rows, dim, "fake vectors")?.map(|v| v as f32);
    let model = diversity::kmeans_fit(&r, k, seed)?;
    let counts = diversity::assign_bins(&model, &g)?;
    let res = diversity::score_counts(&model, &counts, alpha)?;
    Ok(DiversitySummary {
        ndb: res.ndb,
        ndb_over_k: res.ndb_over_k,
        jsd: res.jsd,
    })
}

/// 160-dim mel statistics of an `80 × 320` buffer.
pub fn melstat_embed(mel: &[f64], bands: usize, frames: usize) -> Result<Vec<f64>> {
    let mel = MelSpectrogram {
        values: view(mel, bands, frames, "mel")?,
        sample_rate: crate::audio_io::CANONICAL_RATE,
        frame_spec: StftFrameSpec::default(),
        source_id: String::new(),
    };
    Ok(features::melstat_embed(&mel)?.vector)
}
