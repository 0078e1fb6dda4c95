//! Seeded synthetic 2-D datasets with per-sample mode labels.
//!
//! A dataset is fully determined by `(name, n, params, seed)`: regenerating
//! with the same inputs yields the same bytes.

mod io;
mod subset;

pub use subset::{drop_modes, keep_count, split_disjoint, SubsetManifest};

use crate::digest::{json_digest, sha256_hex};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    EightGaussians,
    TwoMoons,
    Checkerboard,
    TwoSpirals,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::EightGaussians => "eight-gaussians",
            DatasetName::TwoMoons => "two-moons",
            DatasetName::Checkerboard => "checkerboard",
            DatasetName::TwoSpirals => "two-spirals",
        }
    }

    pub fn num_modes(self) -> usize {
        match self {
            DatasetName::EightGaussians | DatasetName::Checkerboard => 8,
            DatasetName::TwoMoons | DatasetName::TwoSpirals => 2,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eight-gaussians" => DatasetName::EightGaussians,
            "two-moons" => DatasetName::TwoMoons,
            "checkerboard" => DatasetName::Checkerboard,
            "two-spirals" => DatasetName::TwoSpirals,
            other => return Err(Error::invalid(format!("unknown dataset `{other}`"))),
        })
    }
}

/// Generator parameters. Fields a generator does not use are ignored but
/// still part of the dataset identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    /// Ring radius (eight-gaussians).
    pub radius: f64,
    /// Component standard deviation (eight-gaussians).
    pub std: f64,
    /// Additive Gaussian noise (two-moons, two-spirals).
    pub noise: f64,
    /// Spatial scale (two-moons, checkerboard cell size, two-spirals).
    pub scale: f64,
    /// Per-mode sampling weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
    /// Assign labels round-robin instead of drawing them.
    pub balanced: bool,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            radius: 4.0,
            std: 0.15,
            noise: 0.05,
            scale: 1.0,
            weights: None,
            balanced: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub n: usize,
    #[serde(default)]
    pub params: DatasetParams,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(name: DatasetName, n: usize, seed: u64) -> Self {
        Self {
            name,
            n,
            params: DatasetParams::default(),
            seed,
        }
    }

    pub fn with_params(mut self, params: DatasetParams) -> Self {
        self.params = params;
        self
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// Provenance record stored alongside every bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub dim: usize,
    pub num_modes: usize,
    pub digest: String,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    spec: DatasetSpec,
    samples: Tensor,
    labels: Vec<u32>,
    num_modes: usize,
    digest: String,
}

impl DatasetBundle {
    pub(crate) fn from_parts(
        spec: DatasetSpec,
        samples: Tensor,
        labels: Vec<u32>,
        num_modes: usize,
    ) -> Result<Self> {
        if samples.shape().len() != 2 || samples.rows() != labels.len() || labels.is_empty() {
            return Err(Error::invalid(format!(
                "samples {:?} do not match {} labels",
                samples.shape(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_modes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {num_modes})"
            )));
        }
        let mut b = Self {
            spec,
            samples,
            labels,
            num_modes,
            digest: String::new(),
        };
        b.digest = sha256_hex(&b.encode_body());
        Ok(b)
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn name(&self) -> DatasetName {
        self.spec.name
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    /// Identity hash: SHA-256 of the encoded payload.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            spec: self.spec.clone(),
            dim: self.dim(),
            num_modes: self.num_modes,
            digest: self.digest.clone(),
            tool_version: crate::TOOL_VERSION.to_string(),
        }
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_modes];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Rows selected by a subset manifest, in manifest order.
    pub fn subset_samples(&self, subset: &SubsetManifest) -> Result<Tensor> {
        subset.check_parent(self)?;
        Ok(self.samples.select_rows(subset.indices()))
    }

    /// Generator centres of each mode. Falls back to per-label sample means
    /// for generators without point-like modes.
    pub fn mode_centers(&self) -> Tensor {
        let p = &self.spec.params;
        match self.spec.name {
            DatasetName::EightGaussians => eight_gaussian_centers(p.radius),
            DatasetName::Checkerboard => {
                let cells = checkerboard_cells();
                let rows: Vec<[f64; 2]> = cells
                    .iter()
                    .map(|&(i, j)| {
                        [
                            (i as f64 - 2.0 + 0.5) * p.scale,
                            (j as f64 - 2.0 + 0.5) * p.scale,
                        ]
                    })
                    .collect();
                Tensor::from_rows(&rows).expect("fixed shape")
            }
            DatasetName::TwoMoons | DatasetName::TwoSpirals => {
                let d = self.dim();
                let mut sums = vec![0.0; self.num_modes * d];
                let mut counts = vec![0usize; self.num_modes];
                for (i, &l) in self.labels.iter().enumerate() {
                    counts[l as usize] += 1;
                    for (s, v) in sums[l as usize * d..(l as usize + 1) * d]
                        .iter_mut()
                        .zip(self.samples.row(i))
                    {
                        *s += v;
                    }
                }
                for (m, &c) in counts.iter().enumerate() {
                    for s in &mut sums[m * d..(m + 1) * d] {
                        *s /= c.max(1) as f64;
                    }
                }
                Tensor::matrix(self.num_modes, d, sums).expect("consistent shape")
            }
        }
    }
}

pub fn eight_gaussian_centers(radius: f64) -> Tensor {
    let rows: Vec<[f64; 2]> = (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    Tensor::from_rows(&rows).expect("fixed shape")
}

/// Filled cells of a 4×4 board, `(column, row)` with even parity.
fn checkerboard_cells() -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(8);
    for j in 0..4 {
        for i in 0..4 {
            if (i + j) % 2 == 0 {
                v.push((i, j));
            }
        }
    }
    v
}

fn draw_labels(spec: &DatasetSpec, rng: &mut rng::Stream) -> Result<Vec<u32>> {
    let modes = spec.name.num_modes();
    if spec.params.balanced {
        return Ok((0..spec.n).map(|i| (i % modes) as u32).collect());
    }
    let weights = match &spec.params.weights {
        Some(w) => {
            if w.len() != modes || w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::invalid(format!(
                    "{} needs {modes} positive weights, got {w:?}",
                    spec.name
                )));
            }
            w.clone()
        }
        None => vec![1.0; modes],
    };
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(modes);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    Ok((0..spec.n)
        .map(|_| {
            let u = rng::uniform(rng);
            cdf.iter().position(|&c| u < c).unwrap_or(modes - 1) as u32
        })
        .collect())
}

pub fn generate(spec: &DatasetSpec) -> Result<DatasetBundle> {
    let modes = spec.name.num_modes();
    if spec.n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    if spec.n < modes {
        return Err(Error::invalid(format!(
            "{} needs at least {modes} samples, got {}",
            spec.name, spec.n
        )));
    }
    let p = &spec.params;
    if spec.name == DatasetName::EightGaussians && spec.params.weights.is_some() && p.balanced {
        return Err(Error::invalid("`weights` and `balanced` are mutually exclusive"));
    }
    let mut r = rng::stream(spec.seed);
    let labels = draw_labels(spec, &mut r)?;
    let mut data = Vec::with_capacity(spec.n * 2);
    let mut z = [0.0; 2];
    match spec.name {
        DatasetName::EightGaussians => {
            let centers = eight_gaussian_centers(p.radius);
            for &l in &labels {
                rng::fill_normal(&mut r, &mut z);
                let c = centers.row(l as usize);
                data.push(c[0] + p.std * z[0]);
                data.push(c[1] + p.std * z[1]);
            }
        }
        DatasetName::TwoMoons => {
            for &l in &labels {
                let theta = PI * rng::uniform(&mut r);
                rng::fill_normal(&mut r, &mut z);
                let (x, y) = if l == 0 {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                data.push(p.scale * 2.0 * (x - 0.5 + p.noise * z[0]));
                data.push(p.scale * 2.0 * (y - 0.25 + p.noise * z[1]));
            }
        }
        DatasetName::Checkerboard => {
            let cells = checkerboard_cells();
            for &l in &labels {
                let (i, j) = cells[l as usize];
                let u = rng::uniform(&mut r);
                let v = rng::uniform(&mut r);
                data.push((i as f64 - 2.0 + u) * p.scale);
                data.push((j as f64 - 2.0 + v) * p.scale);
            }
        }
        DatasetName::TwoSpirals => {
            for &l in &labels {
                let theta = rng::uniform(&mut r).sqrt() * 3.0 * PI;
                rng::fill_normal(&mut r, &mut z);
                let radius = p.scale * theta / PI;
                let sign = if l == 0 { 1.0 } else { -1.0 };
                data.push(sign * radius * theta.cos() + p.noise * z[0]);
                data.push(sign * radius * theta.sin() + p.noise * z[1]);
            }
        }
    }
    let samples = Tensor::matrix(spec.n, 2, data)?;
    DatasetBundle::from_parts(spec.clone(), samples, labels, modes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_gaussians_label_counts_are_multinomial() {
        let ds = generate(&DatasetSpec::new(DatasetName::EightGaussians, 8000, 3)).unwrap();
        // Binomial(8000, 1/8): sd = sqrt(8000·1/8·7/8) ≈ 29.58
        let sd = (8000.0_f64 * 0.125 * 0.875).sqrt();
        for c in ds.label_counts() {
            assert!((c as f64 - 1000.0).abs() < 4.0 * sd, "count {c}");
        }
        assert_eq!(ds.len(), 8000);
        assert_eq!(ds.dim(), 2);
    }

    #[test]
    fn balanced_moons_with_two_samples() {
        let mut spec = DatasetSpec::new(DatasetName::TwoMoons, 2, 0);
        spec.params.balanced = true;
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.label_counts(), vec![1, 1]);
    }

    #[test]
    fn same_seed_same_bytes() {
        for name in [
            DatasetName::EightGaussians,
            DatasetName::TwoMoons,
            DatasetName::Checkerboard,
            DatasetName::TwoSpirals,
        ] {
            let spec = DatasetSpec::new(name, 300, 17);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.encode(), b.encode());
            assert_eq!(a.digest(), b.digest());
            let c = generate(&DatasetSpec::new(name, 300, 18)).unwrap();
            assert_ne!(a.digest(), c.digest());
        }
    }

    #[test]
    fn bad_requests() {
        assert!("nine-gaussians".parse::<DatasetName>().is_err());
        assert!(generate(&DatasetSpec::new(DatasetName::TwoMoons, 0, 0)).is_err());
        assert!(generate(&DatasetSpec::new(DatasetName::EightGaussians, 7, 0)).is_err());
        let mut spec = DatasetSpec::new(DatasetName::EightGaussians, 100, 0);
        spec.params.weights = Some(vec![1.0; 3]);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn imbalanced_weights_skew_counts() {
        let mut spec = DatasetSpec::new(DatasetName::EightGaussians, 15000, 1);
        spec.params.weights = Some(vec![8.0, 4.0, 2.0, 1.0, 8.0, 4.0, 2.0, 1.0]);
        let c = generate(&spec).unwrap().label_counts();
        assert!(c[0] > 3 * c[3] && c[4] > 3 * c[7], "{c:?}");
    }

    #[test]
    fn checkerboard_samples_stay_in_their_cell() {
        let ds = generate(&DatasetSpec::new(DatasetName::Checkerboard, 500, 2)).unwrap();
        let centers = ds.mode_centers();
        for i in 0..ds.len() {
            let c = centers.row(ds.labels()[i] as usize);
            let x = ds.samples().row(i);
            assert!((x[0] - c[0]).abs() <= 0.5 && (x[1] - c[1]).abs() <= 0.5);
        }
    }
}
