//! Sample-set comparisons: Fréchet distance between Gaussian fits, paired
//! cosine similarity against a shuffled baseline, and mode coverage.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

const JITTER: f64 = 1e-10;
const NEG_EIG_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
    /// Diagonal jitter added because the covariance was rank deficient.
    pub jitter: f64,
}

impl GaussianFit {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::invalid(format!("covariance of {} entries for dim {d}", cov.len())));
        }
        let cov = DMatrix::from_row_slice(d, d, &cov);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::invalid(format!("covariance asymmetric by {asym:e}")));
        }
        let mut fit = Self {
            mean: DVector::from_vec(mean),
            cov,
            n,
            jitter: 0.0,
        };
        fit.condition()?;
        Ok(fit)
    }

    /// Sample mean and unbiased covariance of the rows of `x`.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = x.expect_matrix("gaussian_fit")?;
        if n <= d {
            return Err(Error::invalid(format!("{n} samples cannot fit a {d}-dim covariance")));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("features".into()));
        }
        let m = DMatrix::from_row_slice(n, d, x.data());
        let mean = m.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;
        let mut fit = Self {
            mean,
            cov,
            n,
            jitter: 0.0,
        };
        fit.condition()?;
        Ok(fit)
    }

    fn condition(&mut self) -> Result<()> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let min = eig.eigenvalues.min();
        let scale = eig.eigenvalues.amax().max(1.0);
        if min < -NEG_EIG_TOL * scale {
            return Err(Error::invalid(format!("covariance not PSD (eigenvalue {min:e})")));
        }
        if min <= JITTER * scale {
            let d = self.cov.nrows();
            self.cov += DMatrix::identity(d, d) * JITTER;
            self.jitter = JITTER;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric square root with negative eigenvalues clamped to zero.
fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

fn trace_sqrt(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
}

pub fn frechet_fits(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("fits of dim {} and {}", a.dim(), b.dim())));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let ra = sqrtm(&a.cov);
    let cross = trace_sqrt(&(&ra * &b.cov * &ra));
    let d2 = dm + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrechetReport {
    pub d2: f64,
    pub feature_map: String,
    pub n_a: usize,
    pub n_b: usize,
    pub jitter_a: f64,
    pub jitter_b: f64,
}

/// Squared Fréchet distance between Gaussian fits of two row sets, on raw
/// coordinates.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<FrechetReport> {
    let fa = GaussianFit::fit(a)?;
    let fb = GaussianFit::fit(b)?;
    Ok(FrechetReport {
        d2: frechet_fits(&fa, &fb)?,
        feature_map: "identity".into(),
        n_a: fa.n,
        n_b: fb.n,
        jitter_a: fa.jitter,
        jitter_b: fb.jitter,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub matched_mean: f64,
    pub matched_std: f64,
    pub shuffled_mean: f64,
    pub shuffled_std: f64,
    pub n_pairs: usize,
    pub skipped_matched: usize,
    pub skipped_shuffled: usize,
    pub feature_map: String,
    pub shuffle_seed: u64,
}

impl SimilarityReport {
    pub fn gap(&self) -> f64 {
        self.matched_mean - self.shuffled_mean
    }

    /// Standard error of the gap, treating the two means as independent.
    pub fn gap_stderr(&self) -> f64 {
        let n = self.n_pairs as f64;
        (self.matched_std.powi(2) / n + self.shuffled_std.powi(2) / n).sqrt()
    }
}

/// A uniformly random cyclic permutation (Sattolo), which has no fixed
/// points.
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut s = rng::stream(seed);
    for i in (1..n).rev() {
        let j = rng::index(&mut s, i);
        p.swap(i, j);
    }
    p
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cosines(a: &Tensor, b: &Tensor, pair: impl Fn(usize) -> usize, rows: &[usize]) -> (Vec<f64>, usize) {
    let mut out = Vec::with_capacity(rows.len());
    let mut skipped = 0;
    for &i in rows {
        match cosine(a.row(i), b.row(pair(i))) {
            Some(c) => out.push(c),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

/// Cosine similarity of row `i` of `a` with row `i` of `b`, against a
/// baseline pairing row `i` of `a` with row `π(i)` of `b` for a seeded
/// derangement `π`. `± std` is over pairs.
pub fn paired_similarity(a: &Tensor, b: &Tensor, shuffle_seed: u64) -> Result<SimilarityReport> {
    let rows: Vec<usize> = (0..a.rows()).collect();
    paired_similarity_on(a, b, &rows, shuffle_seed)
}

/// As [`paired_similarity`], restricted to the listed rows. The baseline
/// deranges within the listed rows.
pub fn paired_similarity_on(
    a: &Tensor,
    b: &Tensor,
    rows: &[usize],
    shuffle_seed: u64,
) -> Result<SimilarityReport> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "paired_similarity",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    a.expect_matrix("paired_similarity")?;
    if rows.len() < 2 {
        return Err(Error::invalid("paired similarity needs at least 2 pairs"));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= a.rows()) {
        return Err(Error::invalid(format!("row {r} out of range")));
    }
    let perm = derangement(rows.len(), shuffle_seed);
    let pos: std::collections::HashMap<usize, usize> =
        rows.iter().enumerate().map(|(p, &r)| (r, p)).collect();
    let (matched, sm) = cosines(a, b, |i| i, rows);
    let (shuffled, ss) = cosines(a, b, |i| rows[perm[pos[&i]]], rows);
    let limit = rows.len() as f64 * 0.01;
    if sm as f64 > limit || ss as f64 > limit {
        return Err(Error::invalid(format!(
            "{sm} matched and {ss} shuffled pairs had zero-norm features (limit 1%)"
        )));
    }
    if matched.len() < 2 || shuffled.len() < 2 {
        return Err(Error::invalid("fewer than 2 usable pairs"));
    }
    let (matched_mean, matched_std) = mean_std(&matched);
    let (shuffled_mean, shuffled_std) = mean_std(&shuffled);
    Ok(SimilarityReport {
        matched_mean,
        matched_std,
        shuffled_mean,
        shuffled_std,
        n_pairs: matched.len(),
        skipped_matched: sm,
        skipped_shuffled: ss,
        feature_map: "identity".into(),
        shuffle_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub radius: f64,
    pub counts: Vec<usize>,
    pub orphans: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self, mode: usize) -> f64 {
        self.counts[mode] as f64 / self.total.max(1) as f64
    }

    pub fn orphan_fraction(&self) -> f64 {
        self.orphans as f64 / self.total.max(1) as f64
    }
}

/// Nearest-center label for each row, `None` when beyond `radius`.
pub fn assign_modes(points: &Tensor, centers: &Tensor, radius: f64) -> Result<Vec<Option<usize>>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let (n, d) = points.expect_matrix("mode_coverage")?;
    let (k, dc) = centers.expect_matrix("mode_coverage")?;
    if d != dc {
        return Err(Error::Shape {
            op: "mode_coverage",
            lhs: points.shape().to_vec(),
            rhs: centers.shape().to_vec(),
        });
    }
    Ok((0..n)
        .map(|i| {
            let p = points.row(i);
            let (best, dist) = (0..k)
                .map(|c| (c, p.iter().zip(centers.row(c)).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            (dist.sqrt() <= radius).then_some(best)
        })
        .collect())
}

pub fn mode_coverage(points: &Tensor, centers: &Tensor, radius: f64) -> Result<Coverage> {
    let labels = assign_modes(points, centers, radius)?;
    let mut counts = vec![0; centers.rows()];
    let mut orphans = 0;
    for l in &labels {
        match l {
            Some(c) => counts[*c] += 1,
            None => orphans += 1,
        }
    }
    Ok(Coverage {
        radius,
        counts,
        orphans,
        total: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit1(mean: f64, var: f64) -> GaussianFit {
        GaussianFit::new(vec![mean], vec![var], 100).unwrap()
    }

    #[test]
    fn one_dimensional_closed_forms() {
        assert!((frechet_fits(&fit1(0.0, 1.0), &fit1(2.0, 1.0)).unwrap() - 4.0).abs() < 1e-9);
        assert!((frechet_fits(&fit1(0.0, 1.0), &fit1(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_sets_are_at_zero() {
        let mut s = rng::stream(1);
        let mut v = vec![0.0; 600];
        rng::fill_normal(&mut s, &mut v);
        let x = Tensor::matrix(300, 2, v).unwrap();
        assert!(frechet_distance(&x, &x).unwrap().d2 < 1e-9);
    }

    #[test]
    fn rank_deficient_gets_jitter() {
        let x = Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let r = frechet_distance(&x, &x).unwrap();
        assert_eq!(r.jitter_a, JITTER);
        assert!(r.d2 < 1e-9);
        assert!(frechet_distance(&Tensor::from_rows(&[[0.0, 1.0]]).unwrap(), &x).is_err());
    }

    #[test]
    fn similarity_extremes() {
        let a = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let r = paired_similarity(&a, &a, 3).unwrap();
        assert_eq!(r.matched_mean, 1.0);
        let neg = Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|v| -v).collect()).unwrap();
        assert_eq!(paired_similarity(&a, &neg, 3).unwrap().matched_mean, -1.0);
    }

    #[test]
    fn zero_vectors_are_skipped_up_to_one_percent() {
        let mut rows = vec![[1.0, 0.5]; 200];
        rows[7] = [0.0, 0.0];
        let a = Tensor::from_rows(&rows).unwrap();
        let r = paired_similarity(&a, &a, 0).unwrap();
        assert_eq!(r.skipped_matched, 1);
        assert_eq!(r.n_pairs, 199);
        rows[8] = [0.0, 0.0];
        rows[9] = [0.0, 0.0];
        let a = Tensor::from_rows(&rows).unwrap();
        assert!(paired_similarity(&a, &a, 0).is_err());
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        for seed in 0..50 {
            let p = derangement(17, seed);
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..17).collect::<Vec<_>>());
        }
    }

    #[test]
    fn coverage_counts() {
        let centers = Tensor::from_rows(&[[0.0, 0.0], [5.0, 0.0]]).unwrap();
        let pts = Tensor::from_rows(&[[0.0, 0.0], [5.0, 0.0], [5.0, 0.0], [50.0, 50.0]]).unwrap();
        let c = mode_coverage(&pts, &centers, 0.5).unwrap();
        assert_eq!(c.counts, vec![1, 2]);
        assert_eq!(c.orphans, 1);
        let far = Tensor::from_rows(&[[100.0, 0.0], [0.0, 100.0]]).unwrap();
        assert_eq!(mode_coverage(&far, &centers, 0.5).unwrap().orphan_fraction(), 1.0);
        assert!(mode_coverage(&pts, &centers, 0.0).is_err());
    }
}
