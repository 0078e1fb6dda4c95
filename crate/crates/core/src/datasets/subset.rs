//! Subset manifests: which rows of a parent dataset a run trains on.

use super::DatasetBundle;
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Number of samples kept at pruning fraction `pr`: `round((1 − pr)·n)`,
/// rounding halves up.
pub fn keep_count(n: usize, pr: f64) -> usize {
    round_half_up((1.0 - pr) * n as f64).min(n)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetManifest {
    parent: String,
    parent_len: usize,
    method: String,
    pr: f64,
    indices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SubsetFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    manifest: SubsetManifest,
    digest: String,
}

const FORMAT: &str = "fmlab.subset";

impl SubsetManifest {
    /// Sorts `indices` and checks they are unique, in range, and sized
    /// `round((1 − pr)·N)`.
    pub fn new(
        parent: &DatasetBundle,
        method: impl Into<String>,
        pr: f64,
        mut indices: Vec<usize>,
    ) -> Result<Self> {
        let n = parent.len();
        if !(0.0..1.0).contains(&pr) {
            return Err(Error::invalid(format!("pruning fraction {pr} outside [0, 1)")));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("subset indices must be unique"));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::invalid(format!("index {last} out of range for N = {n}")));
            }
        }
        if indices.is_empty() {
            return Err(Error::invalid("subset is empty"));
        }
        if keep_count(n, pr) != indices.len() {
            return Err(Error::invalid(format!(
                "{} indices do not match pr = {pr} of N = {n}",
                indices.len()
            )));
        }
        Ok(Self {
            parent: parent.digest().to_string(),
            parent_len: n,
            method: method.into(),
            pr,
            indices,
        })
    }

    /// A subset whose pruning fraction is implied by its size.
    pub fn from_indices(
        parent: &DatasetBundle,
        method: impl Into<String>,
        indices: Vec<usize>,
    ) -> Result<Self> {
        let pr = 1.0 - indices.len() as f64 / parent.len() as f64;
        Self::new(parent, method, pr.max(0.0), indices)
    }

    pub fn full(parent: &DatasetBundle) -> Self {
        Self::new(parent, "full", 0.0, (0..parent.len()).collect()).expect("full set is valid")
    }

    pub fn parent(&self) -> &str {
        &self.parent
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn pr(&self) -> f64 {
        self.pr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn check_parent(&self, ds: &DatasetBundle) -> Result<()> {
        if self.parent != ds.digest() {
            return Err(Error::DigestMismatch {
                expected: self.parent.clone(),
                found: ds.digest().to_string(),
            });
        }
        Ok(())
    }

    pub fn is_disjoint(&self, other: &SubsetManifest) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    /// Indices of the parent not in this subset; `None` when that is empty.
    pub fn complement(&self) -> Option<SubsetManifest> {
        let kept: BTreeSet<usize> = self.indices.iter().copied().collect();
        let rest: Vec<usize> = (0..self.parent_len).filter(|i| !kept.contains(i)).collect();
        if rest.is_empty() {
            return None;
        }
        Some(SubsetManifest {
            parent: self.parent.clone(),
            parent_len: self.parent_len,
            method: format!("complement({})", self.method),
            pr: 1.0 - rest.len() as f64 / self.parent_len as f64,
            indices: rest,
        })
    }

    pub fn to_json(&self) -> String {
        let file = SubsetFile {
            format: FORMAT.into(),
            version: 1,
            manifest: self.clone(),
            digest: self.digest(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SubsetFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != 1 {
            return Err(Error::format(format!(
                "unsupported subset file {} v{}",
                file.format, file.version
            )));
        }
        let m = file.manifest;
        let actual = m.digest();
        if actual != file.digest {
            return Err(Error::DigestMismatch {
                expected: file.digest,
                found: actual,
            });
        }
        if m.indices.windows(2).any(|w| w[0] >= w[1])
            || m.indices.last().is_some_and(|&l| l >= m.parent_len)
        {
            return Err(Error::format("subset indices must be sorted, unique and in range"));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loads and checks the manifest belongs to `parent`.
    pub fn load_for(path: impl AsRef<Path>, parent: &DatasetBundle) -> Result<Self> {
        let m = Self::load(path)?;
        m.check_parent(parent)?;
        Ok(m)
    }
}

/// Two disjoint random subsets of sizes `round(f₁N)` and
/// `min(round(f₂N), N − round(f₁N))`, halves rounded up.
pub fn split_disjoint(
    ds: &DatasetBundle,
    fractions: [f64; 2],
    seed: u64,
) -> Result<[SubsetManifest; 2]> {
    let [f1, f2] = fractions;
    if !(0.0..=1.0).contains(&f1) || !(0.0..=1.0).contains(&f2) || f1 + f2 > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must lie in [0, 1] and sum to at most 1"
        )));
    }
    let n = ds.len();
    let n1 = round_half_up(f1 * n as f64).min(n);
    let n2 = round_half_up(f2 * n as f64).min(n - n1);
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed), &mut order);
    let a = SubsetManifest::from_indices(ds, "split-a", order[..n1].to_vec())?;
    let b = SubsetManifest::from_indices(ds, "split-b", order[n1..n1 + n2].to_vec())?;
    Ok([a, b])
}

/// All samples whose label is not in `modes`.
pub fn drop_modes(ds: &DatasetBundle, modes: &[u32]) -> Result<SubsetManifest> {
    if let Some(bad) = modes.iter().find(|&&m| m as usize >= ds.num_modes()) {
        return Err(Error::invalid(format!(
            "unknown mode label {bad} (dataset has {})",
            ds.num_modes()
        )));
    }
    let dropped: BTreeSet<u32> = modes.iter().copied().collect();
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| !dropped.contains(&ds.labels()[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("dropping these modes leaves an empty training set"));
    }
    let tag: Vec<String> = dropped.iter().map(|m| m.to_string()).collect();
    SubsetManifest::from_indices(ds, format!("drop-modes[{}]", tag.join(",")), keep)
}
