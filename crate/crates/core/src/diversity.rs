//! K-means binning of mel tensors, the number of statistically different
//! bins (NDB) under a pooled two-proportion z-test, and the Jensen-Shannon
//! divergence between bin occupancies.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::rng;
use crate::tensorio::{self, Tensor};

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_K: usize = 100;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Per-dimension standardization fitted on the reference set.
/// Zero-variance dimensions are centred but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(vectors: &Matrix<f32>) -> Self {
        let (n, d) = vectors.shape();
        let mut mean = vec![0.0f64; d];
        for row in vectors.row_iter() {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; d];
        for row in vectors.row_iter() {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v as f64 - m;
                *s += c * c;
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f32], out: &mut [f32]) {
        for (((o, &v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = ((v as f64 - m) / s) as f32;
        }
    }

    pub fn apply(&self, vectors: &Matrix<f32>) -> Matrix<f32> {
        let mut out = Matrix::zeros(vectors.rows(), vectors.cols());
        for i in 0..vectors.rows() {
            self.apply_row(vectors.row(i), out.row_mut(i));
        }
        out
    }
}

/// Squared Euclidean distance with eight fixed accumulation lanes, so the
/// result depends only on the operands.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let (rest_a, rest_b) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..8 {
            let d = ca[l] - cb[l];
            lanes[l] += d * d;
        }
    }
    let mut total: f64 = lanes.iter().map(|&v| v as f64).sum();
    for (x, y) in rest_a.iter().zip(rest_b) {
        let d = (x - y) as f64;
        total += d * d;
    }
    total
}

/// Nearest centroid (lowest index on ties) and its squared distance.
#[inline]
fn nearest(point: &[f32], centroids: &Matrix<f32>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// K centroids in standardized space plus the reference bin histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    #[serde(skip)]
    pub centroids: Matrix<f32>,
    pub reference_counts: Vec<u64>,
    pub reference_total: u64,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub k: usize,
    pub iterations: usize,
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    fn centroid_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".centroids.lten");
        path.with_file_name(name)
    }

    /// Writes the model as JSON with the centroids in an LTEN sidecar
    /// (`<path>.centroids.lten`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("cluster model serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        let (k, d) = self.centroids.shape();
        let tensor = Tensor::new(vec![k, d], self.centroids.as_slice().to_vec())?;
        tensorio::write_tensor(Self::centroid_path(path), &tensor)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: ClusterModel =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let sidecar = Self::centroid_path(path);
        let t = tensorio::read_tensor(&sidecar)?;
        if t.dims != [model.k, model.dim()] {
            return Err(Error::format(&sidecar, format!("centroid dims {:?} do not match model", t.dims)));
        }
        model.centroids = Matrix::from_vec(model.k, model.dim(), t.data)?;
        Ok(model)
    }
}

fn assign_all(points: &Matrix<f32>, centroids: &Matrix<f32>) -> Vec<(usize, f64)> {
    par::map_range(points.rows(), |i| nearest(points.row(i), centroids))
}

fn seed_plus_plus(points: &Matrix<f32>, k: usize, seed: u64) -> Result<Matrix<f32>> {
    let n = points.rows();
    let mut rng = rng::seeded(seed);
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = par::map_range(n, |i| squared_distance(points.row(i), centroids.row(0)));
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(format!(
                "k-means needs at least {k} distinct points, found {c}"
            )));
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a candidate");
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        let new = centroids.row(c);
        let updated = par::map_range(n, |i| d2[i].min(squared_distance(points.row(i), new)));
        d2 = updated;
    }
    Ok(centroids)
}

/// K-means with k-means++ seeding and Lloyd iterations (until assignments
/// stop changing, at most 300 rounds) over standardized vectors.
pub fn kmeans_fit(vectors: &Matrix<f32>, k: usize, seed: u64) -> Result<ClusterModel> {
    let (n, d) = vectors.shape();
    if k < 2 || n < k {
        return Err(Error::invalid(format!("k-means needs N >= k >= 2 (N {n}, k {k})")));
    }
    if !vectors.is_finite() {
        return Err(Error::NonFinite("k-means input"));
    }
    let standardizer = Standardizer::fit(vectors);
    let points = standardizer.apply(vectors);
    let mut centroids = seed_plus_plus(&points, k, seed)?;

    let mut assignment = assign_all(&points, &centroids);
    let mut inertia_history = vec![assignment.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0u64; k];
        for (i, &(j, _)) in assignment.iter().enumerate() {
            counts[j] += 1;
            for (s, &v) in sums[j * d..(j + 1) * d].iter_mut().zip(points.row(i)) {
                *s += v as f64;
            }
        }
        // an empty cluster takes over the point farthest from its centroid
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = assignment
                .iter()
                .enumerate()
                .filter(|(_, a)| counts[a.0] > 1)
                .fold(None::<(usize, f64)>, |best, (i, a)| match best {
                    Some((_, bd)) if a.1 <= bd => best,
                    _ => Some((i, a.1)),
                })
                .map(|(i, _)| i)
                .expect("N >= k leaves a cluster with more than one member");
            let old = assignment[donor].0;
            counts[old] -= 1;
            counts[empty] = 1;
            for (t, &v) in points.row(donor).iter().enumerate() {
                sums[old * d + t] -= v as f64;
                sums[empty * d + t] = v as f64;
            }
            assignment[donor] = (empty, 0.0);
        }
        for j in 0..k {
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids.row_mut(j).iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = (s * inv) as f32;
            }
        }

        let next = assign_all(&points, &centroids);
        let inertia: f64 = next.iter().map(|a| a.1).sum();
        let prev = *inertia_history.last().expect("history is non-empty");
        assert!(
            inertia <= prev * (1.0 + 1e-5) + 1e-6,
            "k-means inertia increased from {prev} to {inertia}"
        );
        inertia_history.push(inertia);
        let unchanged = next.iter().zip(&assignment).all(|(a, b)| a.0 == b.0);
        assignment = next;
        if unchanged {
            break;
        }
    }

    let mut reference_counts = vec![0u64; k];
    for &(j, _) in &assignment {
        reference_counts[j] += 1;
    }
    Ok(ClusterModel {
        centroids,
        reference_counts,
        reference_total: n as u64,
        standardizer,
        seed,
        k,
        iterations,
        inertia_history,
    })
}

/// Bin histogram of `vectors` under the model's standardizer and centroids.
pub fn assign_bins(model: &ClusterModel, vectors: &Matrix<f32>) -> Result<Vec<u64>> {
    if vectors.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "vector dimension",
            expected: model.dim(),
            actual: vectors.cols(),
        });
    }
    if vectors.rows() == 0 {
        return Err(Error::invalid("no vectors to assign"));
    }
    let bins = par::map_range(vectors.rows(), |i| {
        let mut buf = vec![0.0f32; vectors.cols()];
        model.standardizer.apply_row(vectors.row(i), &mut buf);
        nearest(&buf, &model.centroids).0
    });
    let mut counts = vec![0u64; model.k];
    for b in bins {
        counts[b] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTest {
    pub reference: u64,
    pub generated: u64,
    pub z: f64,
    pub different: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdbResult {
    pub ndb: usize,
    pub ndb_over_k: f64,
    pub critical_value: f64,
    pub per_bin: Vec<BinTest>,
}

/// Two-sided standard normal critical value for significance `alpha`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Counts bins whose reference and generated proportions differ under a
/// pooled two-proportion z-test. Bins with zero standard error never differ.
pub fn ndb(reference_counts: &[u64], generated_counts: &[u64], alpha: f64) -> Result<NdbResult> {
    if reference_counts.len() != generated_counts.len() {
        return Err(Error::DimensionMismatch {
            what: "bin count",
            expected: reference_counts.len(),
            actual: generated_counts.len(),
        });
    }
    let z_crit = critical_value(alpha)?;
    let n_r: u64 = reference_counts.iter().sum();
    let n_g: u64 = generated_counts.iter().sum();
    if n_r == 0 || n_g == 0 {
        return Err(Error::invalid("NDB needs non-empty reference and generated sets"));
    }
    let (nr, ng) = (n_r as f64, n_g as f64);
    let per_bin: Vec<BinTest> = reference_counts
        .iter()
        .zip(generated_counts)
        .map(|(&r, &g)| {
            let (pr, pg) = (r as f64 / nr, g as f64 / ng);
            let pooled = (r + g) as f64 / (nr + ng);
            let se = (pooled * (1.0 - pooled) * (1.0 / nr + 1.0 / ng)).sqrt();
            let (z, different) = if se > 0.0 {
                let z = (pr - pg) / se;
                (z, z.abs() > z_crit)
            } else {
                (0.0, false)
            };
            BinTest {
                reference: r,
                generated: g,
                z,
                different,
            }
        })
        .collect();
    let count = per_bin.iter().filter(|b| b.different).count();
    Ok(NdbResult {
        ndb: count,
        ndb_over_k: count as f64 / per_bin.len() as f64,
        critical_value: z_crit,
        per_bin,
    })
}

/// Base-2 Jensen-Shannon divergence between two count histograms.
pub fn jsd(p_counts: &[u64], q_counts: &[u64]) -> Result<f64> {
    if p_counts.len() != q_counts.len() {
        return Err(Error::DimensionMismatch {
            what: "bin count",
            expected: p_counts.len(),
            actual: q_counts.len(),
        });
    }
    let (sp, sq): (u64, u64) = (p_counts.iter().sum(), q_counts.iter().sum());
    if sp == 0 || sq == 0 {
        return Err(Error::invalid("JSD needs non-zero totals"));
    }
    if p_counts.iter().zip(q_counts).all(|(&a, &b)| a as u128 * sq as u128 == b as u128 * sp as u128) {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&a, &b) in p_counts.iter().zip(q_counts) {
        let (p, q) = (a as f64 / sp as f64, b as f64 / sq as f64);
        let m = 0.5 * (p + q);
        if p > 0.0 {
            total += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            total += 0.5 * q * (q / m).log2();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Diversity of a generated set relative to a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub ndb: usize,
    pub ndb_over_k: f64,
    pub jsd: f64,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub critical_value: f64,
    pub reference_total: u64,
    pub generated_total: u64,
    pub kmeans_iterations: usize,
    pub per_bin: Vec<BinTest>,
}

/// NDB and JSD of `generated_counts` against a fitted model.
pub fn score_counts(model: &ClusterModel, generated_counts: &[u64], alpha: f64) -> Result<DiversityResult> {
    let test = ndb(&model.reference_counts, generated_counts, alpha)?;
    Ok(DiversityResult {
        ndb: test.ndb,
        ndb_over_k: test.ndb_over_k,
        jsd: jsd(&model.reference_counts, generated_counts)?,
        k: model.k,
        alpha,
        seed: model.seed,
        critical_value: test.critical_value,
        reference_total: model.reference_total,
        generated_total: generated_counts.iter().sum(),
        kmeans_iterations: model.iterations,
        per_bin: test.per_bin,
    })
}

/// Flattens mel tensors row-major into one vector per mel.
pub fn flatten_mels(mels: &[&MelSpectrogram]) -> Result<Matrix<f32>> {
    let first = mels.first().ok_or_else(|| Error::invalid("no mel spectrograms"))?;
    let shape = first.values.shape();
    let d = shape.0 * shape.1;
    let mut data = Vec::with_capacity(mels.len() * d);
    for mel in mels {
        if mel.values.shape() != shape {
            return Err(Error::invalid(format!(
                "mel shape {:?} differs from {:?}",
                mel.values.shape(),
                shape
            )));
        }
        data.extend(mel.values.as_slice().iter().map(|&v| v as f32));
    }
    Matrix::from_vec(mels.len(), d, data)
}

/// Ascending indices of at most `max` of `n` rows, drawn without replacement
/// with `seed`; all rows when `n <= max`.
pub fn sample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut picked = rand::seq::index::sample(&mut rng::seeded(seed), n, max).into_vec();
    picked.sort_unstable();
    picked
}

/// Fits K-means on the reference mels and scores the generated mels.
pub fn evaluate_diversity(
    reference: &[&MelSpectrogram],
    generated: &[&MelSpectrogram],
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<DiversityResult> {
    if reference.len() < k {
        return Err(Error::invalid(format!(
            "reference set of {} is smaller than k = {k}",
            reference.len()
        )));
    }
    critical_value(alpha)?;
    let model = kmeans_fit(&flatten_mels(reference)?, k, seed)?;
    let counts = assign_bins(&model, &flatten_mels(generated)?)?;
    score_counts(&model, &counts, alpha)
}
