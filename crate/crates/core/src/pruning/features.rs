//! Feature maps applied before clustering.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMap {
    Identity,
    /// Centered, rotated onto the principal axes and scaled to unit variance.
    #[default]
    PcaWhiten,
}

impl FeatureMap {
    pub fn tag(self) -> &'static str {
        match self {
            FeatureMap::Identity => "identity",
            FeatureMap::PcaWhiten => "pca-whiten",
        }
    }

    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            FeatureMap::Identity => Ok(x.clone()),
            FeatureMap::PcaWhiten => pca_whiten(x),
        }
    }
}

/// Directions with variance below this are dropped to zero rather than
/// blown up.
const VAR_FLOOR: f64 = 1e-12;

fn pca_whiten(x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.expect_matrix("pca_whiten")?;
    if n < 2 {
        return Err(Error::invalid("whitening needs at least two rows"));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    // Sort axes by decreasing variance, so the output layout is stable.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n * d];
    for (c, &j) in order.iter().enumerate() {
        let var = eig.eigenvalues[j];
        let mut axis = eig.eigenvectors.column(j).into_owned();
        // Fix the eigenvector sign: largest-magnitude entry positive.
        let lead = axis.iamax();
        if axis[lead] < 0.0 {
            axis.neg_mut();
        }
        let s = if var > VAR_FLOOR { 1.0 / var.sqrt() } else { 0.0 };
        for i in 0..n {
            let proj: f64 = (0..d).map(|k| centered[(i, k)] * axis[k]).sum();
            out[i * d + c] = proj * s;
        }
    }
    Tensor::matrix(n, d, out)
}
