//! Turning scores and clusterings into subset manifests.

use super::kmeans::Clustering;
use super::scores::ScoreTable;
use crate::datasets::{keep_count, DatasetBundle, SubsetManifest};
use crate::error::{Error, Result};
use crate::rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuotaMode {
    Proportional,
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Nearest,
    Furthest,
}

/// Per-cluster keep counts summing to exactly `n_keep`.
///
/// Proportional uses largest-remainder rounding of `n_keep·size/N`.
/// Balanced gives `⌊n_keep/k⌋` each plus one more to the `n_keep mod k`
/// largest clusters, caps at cluster size, and hands the deficit out one
/// unit at a time to the cluster with the most slack. Ties go to the lower
/// index throughout.
pub fn allocate_quotas(sizes: &[usize], n_keep: usize, mode: QuotaMode) -> Result<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    if n_keep > n {
        return Err(Error::invalid(format!("cannot keep {n_keep} of {n} samples")));
    }
    let k = sizes.len();
    if k == 0 {
        return Err(Error::invalid("no clusters"));
    }
    let by_desc = |key: &dyn Fn(usize) -> f64| {
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        idx
    };
    let mut q = vec![0; k];
    match mode {
        QuotaMode::Proportional => {
            // Integer arithmetic keeps remainders exact.
            let mut rems = vec![0u128; k];
            for j in 0..k {
                let num = n_keep as u128 * sizes[j] as u128;
                q[j] = (num / n as u128) as usize;
                rems[j] = num % n as u128;
            }
            let short = n_keep - q.iter().sum::<usize>();
            for &j in by_desc(&|j| rems[j] as f64).iter().take(short) {
                q[j] += 1;
            }
        }
        QuotaMode::Balanced => {
            let base = n_keep / k;
            q.iter_mut().for_each(|v| *v = base);
            for &j in by_desc(&|j| sizes[j] as f64).iter().take(n_keep % k) {
                q[j] += 1;
            }
            let mut deficit = 0;
            for j in 0..k {
                if q[j] > sizes[j] {
                    deficit += q[j] - sizes[j];
                    q[j] = sizes[j];
                }
            }
            for _ in 0..deficit {
                let j = (0..k)
                    .max_by(|&a, &b| (sizes[a] - q[a]).cmp(&(sizes[b] - q[b])).then(b.cmp(&a)))
                    .expect("k ≥ 1");
                q[j] += 1;
            }
        }
    }
    debug_assert_eq!(q.iter().sum::<usize>(), n_keep);
    Ok(q)
}

/// Within each cluster, the `quota` members nearest to (or furthest from)
/// its center; distance ties go to the lower sample index.
pub fn select_by_center_distance(
    ds: &DatasetBundle,
    clustering: &Clustering,
    quotas: &[usize],
    direction: Direction,
    method: &str,
) -> Result<SubsetManifest> {
    if clustering.assignment.len() != ds.len() {
        return Err(Error::invalid(format!(
            "clustering covers {} samples, dataset has {}",
            clustering.assignment.len(),
            ds.len()
        )));
    }
    if quotas.len() != clustering.k {
        return Err(Error::invalid("one quota per cluster required"));
    }
    let mut keep = Vec::new();
    for (c, &quota) in quotas.iter().enumerate() {
        let mut members = clustering.members(c);
        if quota > members.len() {
            return Err(Error::invalid(format!(
                "quota {quota} exceeds cluster {c} of size {}",
                members.len()
            )));
        }
        let dist = &clustering.distances;
        members.sort_by(|&a, &b| {
            let o = dist[a].total_cmp(&dist[b]);
            let o = if direction == Direction::Furthest { o.reverse() } else { o };
            o.then(a.cmp(&b))
        });
        keep.extend_from_slice(&members[..quota]);
    }
    SubsetManifest::from_indices(ds, method, keep)
}

/// Highest (or, when `inverse`, lowest) `round((1 − pr)·N)` scores; equal
/// scores keep index order.
pub fn select_top(ds: &DatasetBundle, scores: &ScoreTable, pr: f64, inverse: bool) -> Result<SubsetManifest> {
    scores.check_dataset(ds)?;
    let keep = keep_count(ds.len(), pr);
    let s = &scores.scores;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| {
        let o = s[b].total_cmp(&s[a]);
        let o = if inverse { o.reverse() } else { o };
        o.then(a.cmp(&b))
    });
    order.truncate(keep);
    let tag = format!("{}{}", scores.header.method.as_str(), if inverse { "-inv" } else { "" });
    SubsetManifest::new(ds, tag, pr, order)
}

/// `round((1 − pr)·N)` indices drawn uniformly without replacement.
pub fn select_random(ds: &DatasetBundle, pr: f64, seed: u64) -> Result<SubsetManifest> {
    let keep = keep_count(ds.len(), pr);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng::shuffle(&mut rng::stream(seed), &mut order);
    order.truncate(keep);
    SubsetManifest::new(ds, "random", pr, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, DatasetName, DatasetSpec};
    use crate::pruning::scores::{Normalizer, ScoreHeader, ScoreKind};
    use crate::tensor::Tensor;

    #[test]
    fn quota_examples() {
        assert_eq!(allocate_quotas(&[10; 4], 8, QuotaMode::Balanced).unwrap(), vec![2; 4]);
        assert_eq!(allocate_quotas(&[60, 40], 50, QuotaMode::Proportional).unwrap(), vec![30, 20]);
        assert_eq!(allocate_quotas(&[1, 5, 5], 6, QuotaMode::Balanced).unwrap(), vec![1, 3, 2]);
        assert_eq!(allocate_quotas(&[3, 3, 4], 4, QuotaMode::Balanced).unwrap(), vec![1, 1, 2]);
        assert!(allocate_quotas(&[1, 1], 3, QuotaMode::Proportional).is_err());
    }

    fn ds(n: usize) -> DatasetBundle {
        generate(&DatasetSpec::new(DatasetName::EightGaussians, n, 0)).unwrap()
    }

    fn table(ds: &DatasetBundle, scores: Vec<f64>) -> ScoreTable {
        ScoreTable {
            header: ScoreHeader {
                method: ScoreKind::Grad,
                n: scores.len(),
                t_grid: vec![0.5],
                noise_seed: 0,
                noise_ids: vec![0],
                normalizer: Normalizer::ExactMean,
                surrogate_digest: String::new(),
                dataset_digest: ds.digest().to_string(),
            },
            scores,
        }
    }

    #[test]
    fn top_by_hand() {
        let d = ds(8);
        // only the first three matter for the hand example; pad so N = 8
        let t = table(&d, vec![3.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let top = select_top(&d, &t, 0.75, false).unwrap();
        assert_eq!(top.indices(), &[0, 2]);
        let low = select_top(&d, &t, 0.75, true).unwrap();
        assert_eq!(low.indices(), &[3, 4]);
        assert_eq!(select_top(&d, &t, 0.0, false).unwrap().len(), 8);
    }

    #[test]
    fn center_distance_by_hand() {
        let d = ds(8);
        let clustering = Clustering {
            k: 2,
            centers: Tensor::matrix(2, 1, vec![2.0, 0.0]).unwrap(),
            assignment: vec![0, 0, 0, 1, 1, 1, 1, 1],
            distances: vec![2.0, 1.0, 3.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            inertia: 0.0,
            feature_map: "identity".into(),
            history: vec![],
        };
        let near = select_by_center_distance(&d, &clustering, &[1, 5], Direction::Nearest, "c").unwrap();
        let far = select_by_center_distance(&d, &clustering, &[1, 5], Direction::Furthest, "c").unwrap();
        assert_eq!(near.indices(), &[1, 3, 4, 5, 6, 7]);
        assert_eq!(far.indices(), &[2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn random_selection() {
        let d = ds(100);
        assert_eq!(select_random(&d, 0.0, 1).unwrap().len(), 100);
        let a = select_random(&d, 0.5, 1).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, select_random(&d, 0.5, 1).unwrap());
        assert_ne!(a, select_random(&d, 0.5, 2).unwrap());
    }
}
