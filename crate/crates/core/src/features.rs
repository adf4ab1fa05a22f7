//! Embeddings for FAD and class posteriors for IS: the built-in mel-statistics
//! embedder, a softmax-regression classifier, and ingestion of externally
//! computed arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{MelSpectrogram, N_MELS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prep::FIXED_FRAMES;
use crate::tensorio;

pub const MELSTAT_PROVIDER: &str = "melstat-v1";
pub const MELSTAT_DIM: usize = 2 * N_MELS;

/// Rows of ingested posteriors within this distance of 1 are renormalized.
pub const RENORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub provider_id: String,
    pub clip_id: String,
}

/// A set of embeddings sharing one provider and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub provider_id: String,
    pub clip_ids: Vec<String>,
    pub matrix: Matrix,
}

impl EmbeddingSet {
    pub fn from_embeddings(embeddings: &[Embedding]) -> Result<Self> {
        let first = embeddings
            .first()
            .ok_or_else(|| Error::invalid("empty embedding set"))?;
        if let Some(other) = embeddings.iter().find(|e| e.provider_id != first.provider_id) {
            return Err(Error::invalid(format!(
                "mixed embedding providers {} and {}",
                first.provider_id, other.provider_id
            )));
        }
        let rows: Vec<&[f64]> = embeddings.iter().map(|e| e.vector.as_slice()).collect();
        Ok(Self {
            provider_id: first.provider_id.clone(),
            clip_ids: embeddings.iter().map(|e| e.clip_id.clone()).collect(),
            matrix: Matrix::from_rows(&rows)?,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Per-band mean then per-band population standard deviation over frames.
pub fn melstat_embed(mel: &MelSpectrogram) -> Result<Embedding> {
    if mel.values.shape() != (N_MELS, FIXED_FRAMES) {
        return Err(Error::invalid(format!(
            "melstat embedding expects {N_MELS}x{FIXED_FRAMES}, got {}x{}",
            mel.bands(),
            mel.frames()
        )));
    }
    let mut vector = vec![0.0; MELSTAT_DIM];
    for band in 0..N_MELS {
        let row = mel.values.row(band);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        vector[band] = mean;
        vector[N_MELS + band] = var.sqrt();
    }
    Ok(Embedding {
        vector,
        provider_id: MELSTAT_PROVIDER.to_string(),
        clip_id: mel.source_id.clone(),
    })
}

/// Class-probability rows `p(y|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    pub matrix: Matrix,
    pub class_names: Vec<String>,
    pub provider_id: String,
}

impl PosteriorSet {
    /// Validates rows as probability vectors (sum 1 within 1e-6, entries in [0, 1]).
    pub fn new(matrix: Matrix, class_names: Vec<String>, provider_id: impl Into<String>) -> Result<Self> {
        if matrix.cols() < 2 {
            return Err(Error::invalid("posteriors need at least 2 classes"));
        }
        if class_names.len() != matrix.cols() {
            return Err(Error::DimensionMismatch {
                what: "class names",
                expected: matrix.cols(),
                actual: class_names.len(),
            });
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("posterior row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("posterior row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            matrix,
            class_names,
            provider_id: provider_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn class_count(&self) -> usize {
        self.matrix.cols()
    }
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &Matrix) -> Self {
        let (n, d) = features.shape();
        let mut mean = vec![0.0; d];
        for row in features.row_iter() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in features.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
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
        Self { mean, std }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub step: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            step: 1.0,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over standardized features.
///
/// `weights` is `C × (D+1)` with the bias in the last column. The scaler is
/// part of the model and [`predict_posteriors`] applies it exactly once, so
/// callers always pass raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    pub weights: Matrix,
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub scaler: FeatureScaler,
    pub config: TrainConfig,
    pub loss_history: Vec<f64>,
    pub training_accuracy: f64,
}

const MAX_HALVINGS: usize = 10;

fn logits(weights: &Matrix, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (c, z) in out.iter_mut().enumerate() {
        let w = weights.row(c);
        *z = w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d];
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Mean cross-entropy plus `(l2/2)·|W|²` (bias excluded) and its gradient
/// with respect to `weights`, for already standardized features.
pub fn softmax_objective(weights: &Matrix, features: &Matrix, labels: &[usize], l2: f64) -> (f64, Matrix) {
    let (n, d) = features.shape();
    let classes = weights.rows();
    let mut grad = Matrix::zeros(classes, d + 1);
    let mut z = vec![0.0; classes];
    let mut loss = 0.0;
    for (x, &y) in features.row_iter().zip(labels) {
        logits(weights, x, &mut z);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        softmax_in_place(&mut z);
        for c in 0..classes {
            let delta = z[c] - if c == y { 1.0 } else { 0.0 };
            let g = grad.row_mut(c);
            for (gj, xj) in g[..d].iter_mut().zip(x) {
                *gj += delta * xj;
            }
            g[d] += delta;
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    let mut penalty = 0.0;
    for c in 0..classes {
        let w = weights.row(c);
        let g = grad.row_mut(c);
        for j in 0..=d {
            g[j] *= inv_n;
            if j < d {
                g[j] += l2 * w[j];
                penalty += w[j] * w[j];
            }
        }
    }
    (loss + 0.5 * l2 * penalty, grad)
}

/// Full-batch gradient descent from zero weights; a step that raises the loss
/// is retried at half the step size (at most ten times).
pub fn train_classifier(
    features: &Matrix,
    labels: &[usize],
    class_names: Vec<String>,
    config: TrainConfig,
) -> Result<SoftmaxClassifier> {
    let (n, d) = features.shape();
    let classes = class_names.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: n,
            actual: labels.len(),
        });
    }
    if classes < 2 || n < classes {
        return Err(Error::invalid(format!(
            "degenerate labels: {classes} classes over {n} samples"
        )));
    }
    let mut seen = vec![false; classes];
    for &y in labels {
        *seen.get_mut(y).ok_or_else(|| Error::invalid(format!("label {y} out of range")))? = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "degenerate labels: class {} has no samples",
            class_names[missing]
        )));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("classifier features"));
    }
    if !(config.l2 >= 0.0 && config.step > 0.0) {
        return Err(Error::invalid("l2 must be >= 0 and step > 0"));
    }

    let scaler = FeatureScaler::fit(features);
    let x = scaler.apply(features);
    let mut weights = Matrix::zeros(classes, d + 1);
    let (mut loss, mut grad) = softmax_objective(&weights, &x, labels, config.l2);
    let mut loss_history = vec![loss];
    let mut step = config.step;

    'epochs: for _ in 0..config.epochs {
        for attempt in 0..=MAX_HALVINGS {
            let mut candidate = weights.clone();
            for (w, g) in candidate.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *w -= step * g;
            }
            let (l, g) = softmax_objective(&candidate, &x, labels, config.l2);
            if l <= loss {
                weights = candidate;
                loss = l;
                grad = g;
                loss_history.push(loss);
                break;
            }
            if attempt == MAX_HALVINGS {
                break 'epochs;
            }
            step *= 0.5;
        }
    }

    let mut model = SoftmaxClassifier {
        weights,
        class_names,
        feature_dim: d,
        scaler,
        config,
        loss_history,
        training_accuracy: 0.0,
    };
    let post = predict_posteriors(&model, features)?;
    let correct = post
        .matrix
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    model.training_accuracy = correct as f64 / n as f64;
    Ok(model)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax posteriors for raw (unstandardized) feature rows.
pub fn predict_posteriors(model: &SoftmaxClassifier, features: &Matrix) -> Result<PosteriorSet> {
    if features.cols() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            what: "classifier feature dimension",
            expected: model.feature_dim,
            actual: features.cols(),
        });
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("classifier features"));
    }
    let x = model.scaler.apply(features);
    let classes = model.class_names.len();
    let mut out = Matrix::zeros(x.rows(), classes);
    for i in 0..x.rows() {
        let z = out.row_mut(i);
        logits(&model.weights, x.row(i), z);
        softmax_in_place(z);
    }
    PosteriorSet::new(out, model.class_names.clone(), "softmax-regression")
}

/// Reads a 2-D embedding table from LTEN or CSV (`clip_id,v0,v1,...`).
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let (ids, matrix) = if tensorio::is_lten(path)? {
        let m = tensorio::read_tensor(path)?
            .to_matrix()
            .map_err(|e| Error::format(path, e.to_string()))?;
        ((0..m.rows()).map(|i| format!("row{i}")).collect(), m)
    } else {
        let t = tensorio::read_csv_table(path)?;
        (t.row_ids, t.values)
    };
    if !matrix.is_finite() {
        return Err(Error::format(path, "non-finite embedding value"));
    }
    Ok(EmbeddingSet {
        provider_id: format!("external:{}", path.display()),
        clip_ids: ids,
        matrix,
    })
}

/// Reads posteriors from LTEN or CSV (`clip_id,class0,...`), renormalizing
/// rows within 1e-3 of summing to one and rejecting the rest.
pub fn load_posteriors(path: impl AsRef<Path>) -> Result<PosteriorSet> {
    let path = path.as_ref();
    let (names, mut matrix) = if tensorio::is_lten(path)? {
        let m = tensorio::read_tensor(path)?
            .to_matrix()
            .map_err(|e| Error::format(path, e.to_string()))?;
        ((0..m.cols()).map(|i| format!("class{i}")).collect(), m)
    } else {
        let t = tensorio::read_csv_table(path)?;
        (t.column_names, t.values)
    };
    renormalize_rows(&mut matrix).map_err(|cause| Error::format(path, cause))?;
    PosteriorSet::new(matrix, names, format!("external:{}", path.display()))
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Training labels: clip ids in file order, class indices into the sorted
/// distinct label names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub clip_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

/// Reads a `clip_id,label` CSV.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "clip_id" || &headers[1] != "label" {
        return Err(Error::format(path, "expected header `clip_id,label`"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        rows.push((record[0].to_string(), record[1].to_string()));
    }
    let mut class_names: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    class_names.sort();
    class_names.dedup();
    let labels = rows
        .iter()
        .map(|(_, l)| class_names.binary_search(l).expect("label is present"))
        .collect();
    Ok(LabelSet {
        clip_ids: rows.into_iter().map(|r| r.0).collect(),
        labels,
        class_names,
    })
}

/// Applies the ingestion renormalization rule in place.
pub fn renormalize_rows(matrix: &mut Matrix) -> std::result::Result<(), String> {
    if !matrix.is_finite() {
        return Err("non-finite posterior value".into());
    }
    for i in 0..matrix.rows() {
        let row = matrix.row_mut(i);
        if let Some(j) = row.iter().position(|&p| p < 0.0) {
            return Err(format!("posterior row {i} has negative entry at column {j}"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > RENORM_TOLERANCE {
            return Err(format!("posterior row {i} sums to {sum}, not 1"));
        }
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftFrameSpec;
    use crate::rng;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng};
    use rand_distr::{Distribution, Normal};

    fn mel_from(values: Matrix) -> MelSpectrogram {
        MelSpectrogram {
            values,
            sample_rate: 44_100,
            frame_spec: StftFrameSpec::default(),
            source_id: "m".into(),
        }
    }

    #[test]
    fn melstat_constant_and_two_point() {
        let e = melstat_embed(&mel_from(Matrix::from_vec(80, 320, vec![-3.0; 80 * 320]).unwrap())).unwrap();
        assert!(e.vector[..80].iter().all(|&v| v == -3.0));
        assert!(e.vector[80..].iter().all(|&v| v == 0.0));

        let mut m = Matrix::zeros(80, 320);
        for t in 0..320 {
            m.set(0, t, if t % 2 == 0 { 1.0 } else { 4.0 });
        }
        let e = melstat_embed(&mel_from(m.clone())).unwrap();
        assert_eq!(e.vector[0], 2.5);
        assert_eq!(e.vector[80], 1.5);
        assert_eq!(e, melstat_embed(&mel_from(m)).unwrap());
        assert!(melstat_embed(&mel_from(Matrix::zeros(80, 321))).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn melstat_ignores_frame_order(seed in any::<u64>()) {
            let mut r = rng::seeded(seed);
            let m = Matrix::from_vec(80, 320, (0..80 * 320).map(|_| r.gen_range(-11.0..5.0)).collect()).unwrap();
            let mut perm: Vec<usize> = (0..320).collect();
            perm.shuffle(&mut r);
            let mut shuffled = Matrix::zeros(80, 320);
            for b in 0..80 {
                for (t, &p) in perm.iter().enumerate() {
                    shuffled.set(b, t, m.get(b, p));
                }
            }
            let a = melstat_embed(&mel_from(m)).unwrap();
            let b = melstat_embed(&mel_from(shuffled)).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    pub(crate) fn separable(seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            let y = i % 2;
            let cx = if y == 0 { -5.0 } else { 5.0 };
            rows.push(vec![cx + noise.sample(&mut r), noise.sample(&mut r)]);
            labels.push(y);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_training_is_perfect_and_monotone() {
        let (x, y) = separable(1);
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let model = train_classifier(&x, &y, names(2), cfg).unwrap();
        assert_eq!(model.training_accuracy, 1.0);
        assert!(model.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let post = predict_posteriors(&model, &x).unwrap();
        for (row, &label) in post.matrix.row_iter().zip(&y) {
            assert_eq!(argmax(row), label);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let again = train_classifier(&x, &y, names(2), cfg).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn null_labels_approach_priors() {
        let mut r = rng::seeded(9);
        let n = 400;
        let x = Matrix::from_vec(n, 4, (0..n * 4).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..n).map(|_| if r.gen_bool(0.7) { 0 } else { 1 }).collect();
        let prior0 = y.iter().filter(|&&v| v == 0).count() as f64 / n as f64;
        let max_prior = prior0.max(1.0 - prior0);
        let cfg = TrainConfig { l2: 1.0, step: 1.0, epochs: 300, seed: 0 };
        let model = train_classifier(&x, &y, names(2), cfg).unwrap();
        let post = predict_posteriors(&model, &x).unwrap();
        for row in post.matrix.row_iter() {
            assert!(row.iter().cloned().fold(0.0, f64::max) < max_prior + 0.1);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..20u64 {
            let mut r = rng::seeded(seed);
            let x = Matrix::from_vec(5, 3, (0..15).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
            let y: Vec<usize> = (0..5).map(|i| if i < 3 { i } else { r.gen_range(0..3) }).collect();
            let w = Matrix::from_vec(3, 4, (0..12).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
            let l2 = r.gen_range(0.0..0.5);
            let (_, grad) = softmax_objective(&w, &x, &y, l2);
            let eps = 1e-5;
            for k in 0..12 {
                let mut plus = w.clone();
                plus.as_mut_slice()[k] += eps;
                let mut minus = w.clone();
                minus.as_mut_slice()[k] -= eps;
                let fd = (softmax_objective(&plus, &x, &y, l2).0 - softmax_objective(&minus, &x, &y, l2).0) / (2.0 * eps);
                assert!((fd - grad.as_slice()[k]).abs() < 1e-6, "seed {seed} k {k}");
            }
        }
    }

    #[test]
    fn training_input_errors() {
        let (x, y) = separable(2);
        assert!(train_classifier(&x, &vec![0; 100], names(2), TrainConfig::default()).is_err());
        assert!(train_classifier(&x, &y[..10], names(2), TrainConfig::default()).is_err());
        let mut bad = x.clone();
        bad.set(0, 0, f64::INFINITY);
        assert!(matches!(train_classifier(&bad, &y, names(2), TrainConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn predict_contracts() {
        let model = SoftmaxClassifier {
            weights: Matrix::zeros(3, 3),
            class_names: names(3),
            feature_dim: 2,
            scaler: FeatureScaler { mean: vec![0.0; 2], std: vec![1.0; 2] },
            config: TrainConfig::default(),
            loss_history: vec![],
            training_accuracy: 0.0,
        };
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let p = predict_posteriors(&model, &x).unwrap();
        assert!(p.matrix.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(p.matrix.row(0), p.matrix.row(1));
        assert!(matches!(
            predict_posteriors(&model, &Matrix::zeros(1, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn scaler_is_applied_once() {
        let (x, y) = separable(3);
        let model = train_classifier(&x, &y, names(2), TrainConfig::default()).unwrap();
        let z = model.scaler.apply(&x);
        let direct = predict_posteriors(&model, &x).unwrap();
        let mut manual = vec![0.0; 2];
        logits(&model.weights, z.row(0), &mut manual);
        softmax_in_place(&mut manual);
        assert_eq!(direct.matrix.row(0), manual.as_slice());
    }

    #[test]
    fn ingestion_rules() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("p.csv");
        std::fs::write(&ok, "clip_id,a,b\nx,0.4995,0.5\ny,1,0\n").unwrap();
        let p = load_posteriors(&ok).unwrap();
        assert!((p.matrix.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p.class_names, vec!["a", "b"]);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "clip_id,a,b\nx,0.5,0.5\ny,0.25,0.25\n").unwrap();
        let err = load_posteriors(&bad).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");

        let lten = dir.path().join("e.lten");
        let t = tensorio::Tensor::new(vec![3, 128], (0..384).map(|i| i as f32).collect()).unwrap();
        tensorio::write_tensor(&lten, &t).unwrap();
        let e = load_embeddings(&lten).unwrap();
        assert_eq!((e.len(), e.dim()), (3, 128));
        assert_eq!(e.matrix.get(2, 127), 383.0);

        let nan = dir.path().join("nan.csv");
        std::fs::write(&nan, "clip_id,v0\nx,NaN\n").unwrap();
        assert!(load_embeddings(&nan).is_err());
    }
}
