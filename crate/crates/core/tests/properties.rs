//! Property tests for selection, clustering, metrics and the noise bank.

use fmlab::datasets::{generate, split_disjoint, DatasetBundle, DatasetName, DatasetSpec};
use fmlab::metrics::{derangement, frechet_distance, paired_similarity};
use fmlab::pruning::scores::{normalize, ScoreHeader};
use fmlab::pruning::{
    allocate_quotas, inertia_curve, kmeans, select_by_center_distance, select_top, Direction, Normalizer,
    QuotaMode, ScoreKind, ScoreTable,
};
use fmlab::sampler::NoiseBank;
use fmlab::tensor::Tensor;
use proptest::prelude::*;

fn matrix(n: usize, d: usize, v: Vec<f64>) -> Tensor {
    Tensor::matrix(n, d, v).unwrap()
}

fn points(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Tensor> {
    n.prop_flat_map(move |n| prop::collection::vec(-5.0..5.0f64, n * d).prop_map(move |v| matrix(n, d, v)))
}

fn dataset(n: usize) -> DatasetBundle {
    generate(&DatasetSpec::new(DatasetName::EightGaussians, n, 3)).unwrap()
}

fn table(ds: &DatasetBundle, scores: Vec<f64>) -> ScoreTable {
    ScoreTable {
        header: ScoreHeader {
            method: ScoreKind::Loss,
            n: scores.len(),
            t_grid: vec![0.5],
            noise_seed: 0,
            noise_ids: vec![0],
            normalizer: Normalizer::ExactMean,
            surrogate_digest: "test".into(),
            dataset_digest: ds.digest().to_string(),
        },
        scores,
    }
}

fn rotate(x: &Tensor, angle: f64) -> Tensor {
    let (c, s) = (angle.cos(), angle.sin());
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        let r = x.row(i);
        out.extend([c * r[0] - s * r[1], s * r[0] + c * r[1]]);
    }
    matrix(x.rows(), 2, out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quotas_are_conserved_and_capped(
        sizes in prop::collection::vec(0usize..40, 1..10),
        frac in 0.0..=1.0f64,
        balanced in any::<bool>(),
    ) {
        let n: usize = sizes.iter().sum();
        let keep = (frac * n as f64).floor() as usize;
        let mode = if balanced { QuotaMode::Balanced } else { QuotaMode::Proportional };
        let q = allocate_quotas(&sizes, keep, mode).unwrap();
        prop_assert_eq!(q.iter().sum::<usize>(), keep);
        for (qi, si) in q.iter().zip(&sizes) {
            prop_assert!(qi <= si);
        }
        prop_assert!(allocate_quotas(&sizes, n + 1, mode).is_err());
    }

    #[test]
    fn disjoint_splits_never_intersect(seed in any::<u64>(), n in 8usize..300) {
        let ds = dataset(n);
        let [a, b] = split_disjoint(&ds, [0.5, 0.5], seed).unwrap();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), n);
    }

    #[test]
    fn kmeans_invariants(x in points(6..40, 2), k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(x.rows());
        let c = kmeans(&x, k, 3, seed).unwrap();
        prop_assert!(c.assignment.iter().all(|&l| l < k));
        prop_assert!(c.sizes().iter().all(|&s| s > 0));
        let mut recomputed = 0.0;
        for i in 0..x.rows() {
            let center = c.centers.row(c.assignment[i]);
            recomputed += x.row(i).iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        prop_assert!((recomputed - c.inertia).abs() <= 1e-9 * c.inertia.max(1.0));
        for w in c.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn inertia_is_monotone_in_k(x in points(10..40, 2), seed in any::<u64>()) {
        let ks: Vec<usize> = (1..=x.rows().min(10)).collect();
        let curve = inertia_curve(&x, &ks, 2, seed).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 * (1.0 + 1e-12), "{:?}", curve);
        }
    }

    #[test]
    fn nearest_and_furthest_are_disjoint(seed in any::<u64>(), q in 1usize..10) {
        let ds = dataset(80);
        let c = kmeans(ds.samples(), 4, 2, seed).unwrap();
        let quotas: Vec<usize> = c.sizes().iter().map(|&s| q.min(s / 2)).collect();
        let near = select_by_center_distance(&ds, &c, &quotas, Direction::Nearest, "clust-p").unwrap();
        let far = select_by_center_distance(&ds, &c, &quotas, Direction::Furthest, "clust-p-inv").unwrap();
        prop_assert!(near.is_disjoint(&far));
        prop_assert_eq!(near.len(), quotas.iter().sum::<usize>());
    }

    #[test]
    fn top_and_inverse_cover_the_set(scores in prop::collection::vec(-1e3..1e3f64, 40)) {
        let mut distinct = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() == scores.len());
        let ds = dataset(40);
        let t = table(&ds, scores.clone());
        let hi = select_top(&ds, &t, 0.5, false).unwrap();
        let lo = select_top(&ds, &t, 0.5, true).unwrap();
        prop_assert!(hi.is_disjoint(&lo));
        prop_assert_eq!(hi.len() + lo.len(), 40);
        let min_hi = hi.indices().iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let max_lo = lo.indices().iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_hi > max_lo);
    }

    #[test]
    fn top_is_stable_under_ties(levels in prop::collection::vec(0u8..3, 24), pr in 0.0..0.9f64) {
        let ds = dataset(24);
        let scores: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
        let kept = select_top(&ds, &table(&ds, scores.clone()), pr, false).unwrap();
        // Within the boundary level, the lowest indices are the ones kept.
        let boundary = kept.indices().iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let at: Vec<usize> = (0..24).filter(|&i| scores[i] == boundary).collect();
        let kept_at: Vec<usize> = kept.indices().iter().copied().filter(|&i| scores[i] == boundary).collect();
        prop_assert_eq!(&at[..kept_at.len()], &kept_at[..]);
    }

    #[test]
    fn exact_mean_normalizes_each_timestep(raw in prop::collection::vec(0.01..100.0f64, 5 * 3 * 2)) {
        let (t, m) = (3, 2);
        let n = raw.len() / (t * m);
        let s = normalize(&raw, t, m, Normalizer::ExactMean).unwrap();
        prop_assert!((s.iter().sum::<f64>() / n as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_is_symmetric_and_rotation_invariant(
        a in points(5..30, 2),
        b in points(5..30, 2),
        angle in 0.0..std::f64::consts::TAU,
    ) {
        let ab = frechet_distance(&a, &b).unwrap().d2;
        let ba = frechet_distance(&b, &a).unwrap().d2;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
        prop_assert!(frechet_distance(&a, &a).unwrap().d2 < 1e-9);
        let rot = frechet_distance(&rotate(&a, angle), &rotate(&b, angle)).unwrap().d2;
        prop_assert!((ab - rot).abs() < 1e-8 * ab.max(1.0));
    }

    #[test]
    fn similarity_ignores_positive_rescaling(
        a in points(4..30, 2),
        scales in prop::collection::vec(0.1..10.0f64, 30),
        seed in any::<u64>(),
    ) {
        let n = a.rows();
        prop_assume!((0..n).all(|i| a.row(i).iter().any(|v| v.abs() > 1e-6)));
        let mut b = Vec::with_capacity(a.len());
        for i in 0..n {
            b.extend(a.row(i).iter().map(|v| v * scales[i]));
        }
        let b = matrix(n, 2, b);
        let r = paired_similarity(&a, &b, seed).unwrap();
        prop_assert!((r.matched_mean - 1.0).abs() < 1e-12);
        prop_assert!(r.shuffled_mean.abs() <= 1.0 && r.matched_std >= 0.0);
        let base = paired_similarity(&a, &a, seed).unwrap();
        prop_assert!((r.shuffled_mean - base.shuffled_mean).abs() < 1e-12);
    }

    #[test]
    fn derangements_have_no_fixed_points(n in 2usize..200, seed in any::<u64>()) {
        let p = derangement(n, seed);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(p.iter().enumerate().all(|(i, &j)| i != j));
    }

    #[test]
    fn bank_samples_are_pure(seed in any::<u64>(), i in 0usize..500, j in 0usize..500) {
        let bank = NoiseBank::new(seed, 3, 500);
        let first = bank.sample(i).unwrap();
        let _ = bank.sample(j).unwrap();
        let _ = bank.rows(&[j, i, j]).unwrap();
        prop_assert_eq!(first.clone(), bank.sample(i).unwrap());
        let one = bank.rows(&[i]).unwrap();
        prop_assert_eq!(one.row(0), &first[..]);
    }
}
