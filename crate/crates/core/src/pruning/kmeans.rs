//! Lloyd k-means with k-means++ seeding.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use std::fmt::Write as _;

pub const MAX_ITERS: usize = 200;
pub const REL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub k: usize,
    /// `k × d`.
    pub centers: Tensor,
    pub assignment: Vec<usize>,
    /// Euclidean distance of each sample to its center.
    pub distances: Vec<f64>,
    pub inertia: f64,
    pub feature_map: String,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }

    /// `index,label,distance` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,label,distance\n");
        for (i, (a, d)) in self.assignment.iter().zip(&self.distances).enumerate() {
            writeln!(out, "{i},{a},{d:.17e}").expect("string write");
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Points<'a> {
    n: usize,
    d: usize,
    data: &'a [f64],
}

impl Points<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Nearest center for each point, ties to the lower center index. A cluster
/// left empty takes the point farthest from its own center among clusters
/// that can spare one, and moves its center there.
fn assign(p: &Points, centers: &mut [f64], k: usize, labels: &mut [usize], d2: &mut [f64]) -> f64 {
    let mut counts = vec![0usize; k];
    for i in 0..p.n {
        let x = p.row(i);
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let v = sq_dist(x, &centers[c * p.d..(c + 1) * p.d]);
            if v < best.0 {
                best = (v, c);
            }
        }
        labels[i] = best.1;
        d2[i] = best.0;
        counts[best.1] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..p.n)
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if d2[b] >= d2[i] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = donor {
            counts[labels[i]] -= 1;
            counts[c] = 1;
            labels[i] = c;
            d2[i] = 0.0;
            centers[c * p.d..(c + 1) * p.d].copy_from_slice(p.row(i));
        }
    }
    d2.iter().sum()
}

fn seed_plus_plus(p: &Points, k: usize, stream: &mut rng::Stream) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k * p.d);
    let first = rng::index(stream, p.n);
    centers.extend_from_slice(p.row(first));
    let mut d2: Vec<f64> = (0..p.n).map(|i| sq_dist(p.row(i), p.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng::uniform(stream) * total;
            let mut acc = 0.0;
            let mut pick = p.n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng::index(stream, p.n)
        };
        centers.extend_from_slice(p.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(p.row(i), p.row(pick)));
        }
    }
    centers
}

struct Run {
    centers: Vec<f64>,
    labels: Vec<usize>,
    d2: Vec<f64>,
    inertia: f64,
    history: Vec<f64>,
}

fn update_centers(p: &Points, k: usize, labels: &[usize], centers: &mut [f64]) {
    let mut sums = vec![0.0; k * p.d];
    let mut counts = vec![0usize; k];
    for i in 0..p.n {
        counts[labels[i]] += 1;
        for (s, v) in sums[labels[i] * p.d..].iter_mut().zip(p.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..p.d {
                centers[c * p.d + j] = sums[c * p.d + j] / counts[c] as f64;
            }
        }
    }
}

/// One pass of single-point moves: a point changes cluster when the exact
/// inertia change, including both centroid shifts, is negative. Leaves
/// `centers` at the means of the new labels.
fn hartigan_pass(p: &Points, k: usize, centers: &mut [f64], labels: &mut [usize]) -> bool {
    update_centers(p, k, labels, centers);
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut moved = false;
    for i in 0..p.n {
        let a = labels[i];
        if counts[a] < 2 {
            continue;
        }
        let x = p.row(i);
        let na = counts[a] as f64;
        let out = na / (na - 1.0) * sq_dist(x, &centers[a * p.d..(a + 1) * p.d]);
        let mut best = (out, a);
        for b in (0..k).filter(|&b| b != a) {
            let nb = counts[b] as f64;
            let cost = nb / (nb + 1.0) * sq_dist(x, &centers[b * p.d..(b + 1) * p.d]);
            if cost < best.0 {
                best = (cost, b);
            }
        }
        let b = best.1;
        if b == a || out - best.0 <= REL_TOL * out {
            continue;
        }
        for j in 0..p.d {
            let (ca, cb) = (centers[a * p.d + j], centers[b * p.d + j]);
            centers[a * p.d + j] = (ca * na - x[j]) / (na - 1.0);
            let nb = counts[b] as f64;
            centers[b * p.d + j] = (cb * nb + x[j]) / (nb + 1.0);
        }
        counts[a] -= 1;
        counts[b] += 1;
        labels[i] = b;
        moved = true;
    }
    if moved {
        update_centers(p, k, labels, centers);
    }
    moved
}

/// Lloyd iterations to tolerance, then single-point refinement; the two
/// alternate until neither improves. Every step is recorded in `history`.
fn lloyd(p: &Points, k: usize, mut centers: Vec<f64>) -> Run {
    let mut labels = vec![0; p.n];
    let mut d2 = vec![0.0; p.n];
    let mut inertia = assign(p, &mut centers, k, &mut labels, &mut d2);
    let mut history = vec![inertia];
    let mut iters = 0;
    loop {
        while iters < MAX_ITERS {
            iters += 1;
            update_centers(p, k, &labels, &mut centers);
            let next = assign(p, &mut centers, k, &mut labels, &mut d2);
            history.push(next);
            let done = inertia - next <= REL_TOL * inertia.max(f64::MIN_POSITIVE);
            inertia = next;
            if done {
                break;
            }
        }
        if iters >= MAX_ITERS || !hartigan_pass(p, k, &mut centers, &mut labels) {
            break;
        }
        iters += 1;
        inertia = assign(p, &mut centers, k, &mut labels, &mut d2);
        history.push(inertia);
    }
    Run {
        centers,
        labels,
        d2,
        inertia,
        history,
    }
}

fn finish(p: &Points, k: usize, run: Run, feature_map: &str) -> Result<Clustering> {
    Ok(Clustering {
        k,
        centers: Tensor::matrix(k, p.d, run.centers)?,
        assignment: run.labels,
        distances: run.d2.iter().map(|v| v.sqrt()).collect(),
        inertia: run.inertia,
        feature_map: feature_map.to_string(),
        history: run.history,
    })
}

fn points(features: &Tensor) -> Result<Points<'_>> {
    let (n, d) = features.expect_matrix("kmeans")?;
    Ok(Points {
        n,
        d,
        data: features.data(),
    })
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} points")));
    }
    Ok(())
}

/// Best of `restarts` k-means++/Lloyd runs; restart `r` draws from
/// `child_seed(seed, "kmeans/r")`.
pub fn kmeans(features: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    kmeans_tagged(features, k, restarts, seed, "identity")
}

pub fn kmeans_tagged(
    features: &Tensor,
    k: usize,
    restarts: usize,
    seed: u64,
    feature_map: &str,
) -> Result<Clustering> {
    let p = points(features)?;
    check_k(k, p.n)?;
    let best = best_of(&p, k, restarts.max(1), seed);
    finish(&p, k, best, feature_map)
}

fn best_of(p: &Points, k: usize, restarts: usize, seed: u64) -> Run {
    let mut best: Option<Run> = None;
    for r in 0..restarts {
        let mut s = rng::stream(rng::child_seed(seed, &format!("kmeans/{r}")));
        let run = lloyd(p, k, seed_plus_plus(p, k, &mut s));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

/// Inertia for each k in `k_range` (sorted ascending). Each k also runs a
/// warm start from the previous solution plus the farthest point, which
/// keeps the curve non-increasing.
pub fn inertia_curve(
    features: &Tensor,
    k_range: &[usize],
    restarts: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    let p = points(features)?;
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut out = Vec::with_capacity(ks.len());
    let mut prev: Option<Run> = None;
    for &k in &ks {
        check_k(k, p.n)?;
        let mut run = best_of(&p, k, restarts.max(1), seed);
        if let Some(pr) = &prev {
            let mut centers = pr.centers.clone();
            let mut d2 = pr.d2.clone();
            let mut have = centers.len() / p.d;
            while have < k {
                let far = (0..p.n).fold(0, |b, i| if d2[i] > d2[b] { i } else { b });
                let c = p.row(far).to_vec();
                for (i, v) in d2.iter_mut().enumerate() {
                    *v = v.min(sq_dist(p.row(i), &c));
                }
                centers.extend(c);
                have += 1;
            }
            let warm = lloyd(&p, k, centers);
            if warm.inertia < run.inertia {
                run = warm;
            }
        }
        out.push((k, run.inertia));
        prev = Some(run);
    }
    Ok(out)
}

pub fn inertia_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("k,inertia\n");
    for (k, v) in curve {
        writeln!(s, "{k},{v:.17e}").expect("string write");
    }
    s
}
