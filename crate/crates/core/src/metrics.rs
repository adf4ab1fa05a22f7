//! Inception Score and Fréchet Audio Distance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PosteriorSet;
use crate::matrix::Matrix;
use crate::rng;

/// Eigenvalues below `-PSD_REJECT * scale` mark a matrix as not PSD.
const PSD_REJECT: f64 = 1e-6;

/// Mean and unbiased covariance of an embedding set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub sample_count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and `N-1` covariance, symmetrized.
pub fn fit_gaussian(embeddings: &Matrix) -> Result<GaussianStats> {
    let (n, d) = embeddings.shape();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 embeddings, got {n}")));
    }
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("embeddings"));
    }
    let mut mean = vec![0.0; d];
    for row in embeddings.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in embeddings.row_iter() {
        for ((c, &v), &m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            let out = cov.row_mut(i);
            for j in i..d {
                out[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(GaussianStats {
        mean,
        covariance: cov,
        sample_count: n,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric PSD matrix via eigendecomposition, clipping
/// small negative eigenvalues to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_REJECT * scale {
            return Err(Error::NotPsd {
                eigenvalue: *v,
                scale,
            });
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

fn check_square(m: &Matrix, what: &'static str) -> Result<()> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            what,
            expected: m.rows(),
            actual: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// `tr(sqrt(sigma_r · sigma_g))`, evaluated as `tr(sqrt(sqrt(sigma_r) · sigma_g · sqrt(sigma_r)))`.
pub fn trace_sqrt_product(sigma_r: &Matrix, sigma_g: &Matrix) -> Result<f64> {
    check_square(sigma_r, "sigma_r")?;
    check_square(sigma_g, "sigma_g")?;
    if sigma_r.rows() != sigma_g.rows() {
        return Err(Error::DimensionMismatch {
            what: "covariance size",
            expected: sigma_r.rows(),
            actual: sigma_g.rows(),
        });
    }
    let root_r = psd_sqrt(&sigma_r.to_nalgebra())?;
    // validates sigma_g as PSD too
    psd_sqrt(&sigma_g.to_nalgebra())?;
    let inner = &root_r * sigma_g.to_nalgebra() * &root_r;
    let eig = SymmetricEigen::new(symmetrize(&inner));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut total = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -PSD_REJECT * scale {
            return Err(Error::NotPsd {
                eigenvalue: v,
                scale,
            });
        }
        total += v.max(0.0).sqrt();
    }
    Ok(total)
}

/// Fréchet distance between two Gaussians:
/// `|mu_r - mu_g|^2 + tr(sigma_r + sigma_g - 2 sqrt(sigma_r sigma_g))`.
pub fn frechet_distance(real: &GaussianStats, generated: &GaussianStats) -> Result<f64> {
    if real.dim() != generated.dim() {
        return Err(Error::DimensionMismatch {
            what: "embedding dimension",
            expected: real.dim(),
            actual: generated.dim(),
        });
    }
    if real.mean == generated.mean && real.covariance == generated.covariance {
        return Ok(0.0);
    }
    let mean_term: f64 = real
        .mean
        .iter()
        .zip(&generated.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let tr_r = real.covariance.trace();
    let tr_g = generated.covariance.trace();
    let cross = trace_sqrt_product(&real.covariance, &generated.covariance)?;
    let fad = mean_term + tr_r + tr_g - 2.0 * cross;
    let tolerance = 1e-8 * (1.0 + tr_r + tr_g + mean_term);
    if fad < 0.0 {
        if fad < -tolerance {
            return Err(Error::invalid(format!(
                "Fréchet distance evaluated to {fad:e}, beyond numerical noise"
            )));
        }
        return Ok(0.0);
    }
    Ok(fad)
}

/// Inception Score summary over splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsResult {
    pub mean: f64,
    pub std: f64,
    pub split_count: usize,
    pub split_scores: Vec<f64>,
}

/// Marginal floor inside the KL term.
const MARGINAL_FLOOR: f64 = 1e-12;

fn split_score(rows: &[&[f64]], classes: usize) -> f64 {
    let mut marginal = vec![0.0; classes];
    for row in rows {
        for (m, &p) in marginal.iter_mut().zip(row.iter()) {
            *m += p;
        }
    }
    marginal
        .iter_mut()
        .for_each(|m| *m = (*m / rows.len() as f64).max(MARGINAL_FLOOR));
    let mean_kl = rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &m)| p * (p / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / rows.len() as f64;
    mean_kl.exp()
}

/// Inception Score: rows are shuffled with `seed`, cut into `splits`
/// contiguous near-equal parts, scored per part, then summarized as mean and
/// population standard deviation.
pub fn inception_score(posteriors: &PosteriorSet, splits: usize, seed: u64) -> Result<IsResult> {
    let n = posteriors.len();
    let classes = posteriors.class_count();
    if splits == 0 || n < splits {
        return Err(Error::invalid(format!(
            "inception score needs 1 <= splits <= N (splits {splits}, N {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));

    let mut split_scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let (lo, hi) = (s * n / splits, (s + 1) * n / splits);
        let rows: Vec<&[f64]> = order[lo..hi].iter().map(|&i| posteriors.matrix.row(i)).collect();
        let score = split_score(&rows, classes);
        // exp(KL) lies in [1, C] analytically; anything further out is a bug
        assert!(
            score >= 1.0 - 1e-9 && score <= classes as f64 * (1.0 + 1e-9),
            "split score {score} outside [1, {classes}]"
        );
        split_scores.push(score.clamp(1.0, classes as f64));
    }
    let mean = split_scores.iter().sum::<f64>() / splits as f64;
    let var = split_scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / splits as f64;
    Ok(IsResult {
        mean,
        std: var.sqrt(),
        split_count: splits,
        split_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: &[&[f64]]) -> GaussianStats {
        GaussianStats {
            mean,
            covariance: Matrix::from_rows(cov).unwrap(),
            sample_count: 10,
        }
    }

    #[test]
    fn fit_gaussian_hand_cases() {
        let g = fit_gaussian(&Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(g.mean, vec![1.0, 0.0]);
        assert_eq!(g.covariance.as_slice(), &[2.0, 0.0, 0.0, 0.0]);
        let g = fit_gaussian(&Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap()).unwrap();
        assert_eq!(g.mean, vec![1.0]);
        assert_eq!(g.covariance.as_slice(), &[1.0]);
        let same = fit_gaussian(&Matrix::from_rows(&[[3.0, -1.0]; 5]).unwrap()).unwrap();
        assert!(same.covariance.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_gaussian_errors() {
        assert!(fit_gaussian(&Matrix::from_rows(&[[1.0]]).unwrap()).is_err());
        assert!(matches!(
            fit_gaussian(&Matrix::from_rows(&[[1.0], [f64::NAN]]).unwrap()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn trace_sqrt_closed_forms() {
        let eye = Matrix::identity(3);
        assert!((trace_sqrt_product(&eye, &eye).unwrap() - 3.0).abs() < 1e-12);
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[4.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((trace_sqrt_product(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_psd_is_rejected() {
        let bad = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap();
        let eye = Matrix::identity(2);
        assert!(matches!(trace_sqrt_product(&bad, &eye), Err(Error::NotPsd { .. })));
        assert!(matches!(trace_sqrt_product(&eye, &bad), Err(Error::NotPsd { .. })));
        // noise-level negative eigenvalues are clipped
        let noisy = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1e-12]]).unwrap();
        assert!((trace_sqrt_product(&noisy, &eye).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_worked_cases() {
        let a = stats(vec![0.0], &[&[1.0]]);
        let b = stats(vec![1.0], &[&[4.0]]);
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let c = stats(vec![0.0, 0.0], &[&[1.0, 0.0], &[0.0, 4.0]]);
        let d = stats(vec![0.0, 0.0], &[&[4.0, 0.0], &[0.0, 1.0]]);
        assert!((frechet_distance(&c, &d).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(frechet_distance(&c, &c).unwrap(), 0.0);
        assert!(matches!(frechet_distance(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    fn posteriors(rows: Vec<Vec<f64>>) -> PosteriorSet {
        let c = rows[0].len();
        PosteriorSet::new(
            Matrix::from_rows(&rows).unwrap(),
            (0..c).map(|i| format!("c{i}")).collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn inception_hand_cases() {
        let uniform = posteriors(vec![vec![0.25; 4]; 12]);
        let r = inception_score(&uniform, 1, 0).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-12 && r.std == 0.0);

        let two = posteriors(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        let expected = (((4.0f64 / 3.0).ln() + 0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln()) / 2.0).exp();
        let r = inception_score(&two, 1, 3).unwrap();
        assert!((r.mean - expected).abs() < 1e-12);
        assert!((r.mean - 1.2409).abs() < 1e-4);
    }

    #[test]
    fn inception_splits() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let mut r = vec![0.0; 3];
                r[i % 3] = 1.0;
                r
            })
            .collect();
        let r = inception_score(&posteriors(rows.clone()), 10, 42).unwrap();
        assert_eq!(r.split_scores.len(), 10);
        assert!(r.split_scores.iter().all(|&s| (1.0..=3.0).contains(&s)));
        assert_eq!(r, inception_score(&posteriors(rows.clone()), 10, 42).unwrap());
        assert!(inception_score(&posteriors(rows[..5].to_vec()), 6, 0).is_err());
        assert!(inception_score(&posteriors(rows), 0, 0).is_err());
    }
}
