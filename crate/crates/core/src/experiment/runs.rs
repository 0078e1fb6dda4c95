//! The five experiment protocols.

use super::config::{Experiment, ExperimentConfig, PruningConfig, Reference};
use super::pipeline::{Pipeline, Trained};
use crate::datasets::{
    drop_modes, keep_count, split_disjoint, DatasetBundle, DatasetParams, DatasetSpec,
    SubsetManifest,
};
use crate::error::{Error, Result};
use crate::metrics::{
    assign_modes, frechet_distance, mode_coverage, paired_similarity, paired_similarity_on,
    Coverage, SimilarityReport,
};
use crate::model::Arch;
use crate::pruning::{
    allocate_quotas, inertia_curve, kmeans_tagged, select_by_center_distance, select_random,
    select_top, Clustering, Direction, Method, ScoreKind, ScoreTable,
};
use crate::sampler::{integrate, EndpointSet, NoiseBank};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub role: String,
    pub arch: String,
    pub checkpoint: String,
    pub subset: Option<String>,
    pub train_size: usize,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisjointOutcome {
    pub sizes: [usize; 2],
    pub similarity: SimilarityReport,
    pub frechet_between: f64,
    pub frechet_to_data: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRemovalOutcome {
    pub dropped: Vec<u32>,
    pub radius: f64,
    pub coverage_full: Coverage,
    pub coverage_pruned: Coverage,
    /// Share of the pruned model's endpoints landing on a dropped mode.
    pub dropped_fraction: f64,
    /// Pairs whose full-model endpoint lies on a retained mode.
    pub retained: SimilarityReport,
    pub all_pairs: SimilarityReport,
}

impl ModeRemovalOutcome {
    /// Retained matched mean minus the all-pairs shuffled mean.
    pub fn retained_gap(&self) -> f64 {
        self.retained.matched_mean - self.all_pairs.shuffled_mean
    }

    pub fn retained_gap_stderr(&self) -> f64 {
        (self.retained.matched_std.powi(2) / self.retained.n_pairs as f64
            + self.all_pairs.shuffled_std.powi(2) / self.all_pairs.n_pairs as f64)
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSwapOutcome {
    pub variant: DatasetSpec,
    pub similarity: SimilarityReport,
    pub frechet_between: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchPair {
    pub a: String,
    pub b: String,
    pub similarity: SimilarityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchOutcome {
    pub archs: Vec<String>,
    /// Matched mean similarity, row/column order as `archs`.
    pub matrix: Vec<Vec<f64>>,
    pub pairs: Vec<ArchPair>,
}

impl ArchOutcome {
    pub fn pair(&self, a: &str, b: &str) -> Option<&SimilarityReport> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| &p.similarity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub label: String,
    pub kept: usize,
    /// Fréchet distance per reference (config order), averaged over
    /// replicates.
    pub frechet: Vec<f64>,
    /// Standard deviation over replicates (zero for single runs).
    pub frechet_std: Vec<f64>,
    pub replicates: usize,
    pub similarity_mean: f64,
    pub similarity_std: f64,
    pub shuffled_mean: f64,
    pub shuffled_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub pr: f64,
    pub references: Vec<Reference>,
    pub rows: Vec<SweepRow>,
    pub cluster_sizes: Vec<usize>,
    pub quotas_proportional: Vec<usize>,
    pub quotas_balanced: Vec<usize>,
    pub inertia_curve: Vec<(usize, f64)>,
}

impl SweepOutcome {
    pub fn row(&self, m: Method) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    DisjointSubsets(DisjointOutcome),
    ModeRemoval(ModeRemovalOutcome),
    DataSwap(DataSwapOutcome),
    ArchChange(ArchOutcome),
    PruningSweep(SweepOutcome),
}

/// Everything a run produces besides the artifacts in the store.
pub struct RunResult {
    pub outcome: Outcome,
    pub models: Vec<ModelRecord>,
    pub datasets: BTreeMap<String, String>,
    pub bank: NoiseBank,
    pub plots: Vec<(String, String)>,
    pub extra_files: Vec<(String, String)>,
}

fn record(role: &str, t: &Trained, subset: Option<&SubsetManifest>, n: usize) -> ModelRecord {
    ModelRecord {
        role: role.to_string(),
        arch: t.model.arch().tag(),
        checkpoint: t.key.clone(),
        subset: subset.map(|s| s.digest()),
        train_size: subset.map_or(n, |s| s.len()),
        initial_eval_loss: t.trace.initial_eval_loss,
        final_eval_loss: t.trace.final_eval_loss,
    }
}

fn head(e: &EndpointSet, n: usize) -> Tensor {
    let idx: Vec<usize> = (0..n.min(e.len())).collect();
    e.endpoints.select_rows(&idx)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    p: &'a Pipeline<'a>,
    bank: NoiseBank,
}

impl Ctx<'_> {
    fn pairs(&self) -> usize {
        self.cfg.eval.pairs.min(self.bank.count)
    }

    fn train(&self, arch: &Arch, ds: &DatasetBundle, subset: Option<&SubsetManifest>) -> Result<Trained> {
        if let Some(s) = subset {
            self.p.subset(s)?;
        }
        self.p
            .model(arch, ds, subset, &self.cfg.train_config(), self.cfg.seeds().init)
    }

    fn endpoints(&self, t: &Trained) -> Result<EndpointSet> {
        Ok(self.p.endpoints(&t.model, &self.bank, self.cfg.sampler)?.1)
    }

    fn similarity(&self, a: &EndpointSet, b: &EndpointSet) -> Result<SimilarityReport> {
        if !a.aligned_with(b) {
            return Err(Error::invalid("endpoint sets come from different bank samples"));
        }
        let n = self.pairs();
        paired_similarity(&head(a, n), &head(b, n), self.cfg.seeds().shuffle)
    }

    fn trajectories(&self, t: &Trained, count: usize) -> Result<Vec<Tensor>> {
        (0..count.min(self.bank.count))
            .map(|i| {
                let x0 = self.bank.sample(i)?;
                Ok(integrate(&t.model, &x0, self.cfg.sampler.method, self.cfg.sampler.steps)?.points)
            })
            .collect()
    }
}

pub fn run(cfg: &ExperimentConfig, p: &Pipeline) -> Result<RunResult> {
    let spec = cfg.dataset_spec();
    let ds = p.dataset(&spec)?;
    let bank = NoiseBank::new(
        cfg.seeds().bank,
        ds.dim(),
        cfg.eval.pairs.max(cfg.eval.frechet_samples),
    );
    let ctx = Ctx { cfg, p, bank };
    let mut datasets = BTreeMap::new();
    datasets.insert("train".to_string(), ds.digest().to_string());
    let mut res = match &cfg.experiment {
        Experiment::DisjointSubsets { fractions } => disjoint(&ctx, &ds, *fractions)?,
        Experiment::ModeRemoval { drop } => mode_removal(&ctx, &ds, drop)?,
        Experiment::DataSwap { name, params } => data_swap(&ctx, &ds, *name, params, &mut datasets)?,
        Experiment::ArchChange { archs } => arch_change(&ctx, &ds, archs)?,
        Experiment::PruningSweep(pc) => sweep(&ctx, &ds, pc, &mut datasets)?,
    };
    res.datasets = datasets;
    Ok(res)
}

fn disjoint(ctx: &Ctx, ds: &DatasetBundle, fractions: [f64; 2]) -> Result<RunResult> {
    let [a, b] = split_disjoint(ds, fractions, ctx.cfg.seeds().split)?;
    if a.is_empty() || b.is_empty() || !a.is_disjoint(&b) {
        return Err(Error::invalid("the two subsets must be nonempty and disjoint"));
    }
    let arch = &ctx.cfg.arch;
    let (ma, mb) = (ctx.train(arch, ds, Some(&a))?, ctx.train(arch, ds, Some(&b))?);
    let (ea, eb) = (ctx.endpoints(&ma)?, ctx.endpoints(&mb)?);
    let similarity = ctx.similarity(&ea, &eb)?;
    let outcome = DisjointOutcome {
        sizes: [a.len(), b.len()],
        similarity,
        frechet_between: frechet_distance(&ea.endpoints, &eb.endpoints)?.d2,
        frechet_to_data: [
            frechet_distance(&ea.endpoints, ds.samples())?.d2,
            frechet_distance(&eb.endpoints, ds.samples())?.d2,
        ],
    };
    let n = ctx.pairs();
    let plots = vec![
        overlay_plot(ctx, "Seed-matched endpoints: disjoint halves", &head(&ea, n), &head(&eb, n), ["subset A", "subset B"]),
        traj_plot(ctx, "Trajectories from shared noise", &[("subset A", &ma), ("subset B", &mb)])?,
    ];
    Ok(RunResult {
        outcome: Outcome::DisjointSubsets(outcome),
        models: vec![
            record("subset-a", &ma, Some(&a), ds.len()),
            record("subset-b", &mb, Some(&b), ds.len()),
        ],
        datasets: BTreeMap::new(),
        bank: ctx.bank,
        plots,
        extra_files: vec![],
    })
}

fn radius(ctx: &Ctx) -> f64 {
    ctx.cfg.eval.coverage_sigmas * ctx.cfg.dataset.params.std
}

fn mode_removal(ctx: &Ctx, ds: &DatasetBundle, drop: &[u32]) -> Result<RunResult> {
    let pruned = drop_modes(ds, drop)?;
    let arch = &ctx.cfg.arch;
    let full = ctx.train(arch, ds, None)?;
    let kept = ctx.train(arch, ds, Some(&pruned))?;
    let (ef, ek) = (ctx.endpoints(&full)?, ctx.endpoints(&kept)?);
    let centers = ds.mode_centers();
    let r = radius(ctx);
    let coverage_full = mode_coverage(&ef.endpoints, &centers, r)?;
    let coverage_pruned = mode_coverage(&ek.endpoints, &centers, r)?;
    let dropped_fraction = drop.iter().map(|&m| coverage_pruned.fraction(m as usize)).sum();

    let n = ctx.pairs();
    let (hf, hk) = (head(&ef, n), head(&ek, n));
    let labels = assign_modes(&hf, &centers, r)?;
    let retained_rows: Vec<usize> = (0..n)
        .filter(|&i| matches!(labels[i], Some(c) if !drop.contains(&(c as u32))))
        .collect();
    let retained = paired_similarity_on(&hf, &hk, &retained_rows, ctx.cfg.seeds().shuffle)?;
    let all_pairs = paired_similarity(&hf, &hk, ctx.cfg.seeds().shuffle)?;
    let plots = vec![
        overlay_plot(ctx, "Seed-matched endpoints: full data vs dropped modes", &hf, &hk, ["full", "modes dropped"]),
        traj_plot(ctx, "Trajectories from shared noise", &[("full", &full), ("modes dropped", &kept)])?,
    ];
    Ok(RunResult {
        outcome: Outcome::ModeRemoval(ModeRemovalOutcome {
            dropped: drop.to_vec(),
            radius: r,
            coverage_full,
            coverage_pruned,
            dropped_fraction,
            retained,
            all_pairs,
        }),
        models: vec![
            record("full", &full, None, ds.len()),
            record("dropped", &kept, Some(&pruned), ds.len()),
        ],
        datasets: BTreeMap::new(),
        bank: ctx.bank,
        plots,
        extra_files: vec![],
    })
}

fn data_swap(
    ctx: &Ctx,
    ds: &DatasetBundle,
    name: Option<crate::datasets::DatasetName>,
    params: &DatasetParams,
    datasets: &mut BTreeMap<String, String>,
) -> Result<RunResult> {
    let spec_b = DatasetSpec {
        name: name.unwrap_or(ds.name()),
        ..ds.spec().clone()
    }
    .with_params(params.clone());
    let ds_b = ctx.p.dataset(&spec_b)?;
    datasets.insert("swap".into(), ds_b.digest().to_string());
    let arch = &ctx.cfg.arch;
    let (ma, mb) = (ctx.train(arch, ds, None)?, ctx.train(arch, &ds_b, None)?);
    let (ea, eb) = (ctx.endpoints(&ma)?, ctx.endpoints(&mb)?);
    let n = ctx.pairs();
    let plots = vec![overlay_plot(
        ctx,
        "Seed-matched endpoints: dataset swap",
        &head(&ea, n),
        &head(&eb, n),
        ["dataset A", "dataset B"],
    )];
    Ok(RunResult {
        outcome: Outcome::DataSwap(DataSwapOutcome {
            variant: spec_b,
            similarity: ctx.similarity(&ea, &eb)?,
            frechet_between: frechet_distance(&ea.endpoints, &eb.endpoints)?.d2,
        }),
        models: vec![
            record("dataset-a", &ma, None, ds.len()),
            record("dataset-b", &mb, None, ds_b.len()),
        ],
        datasets: BTreeMap::new(),
        bank: ctx.bank,
        plots,
        extra_files: vec![],
    })
}

fn arch_change(ctx: &Ctx, ds: &DatasetBundle, archs: &[Arch]) -> Result<RunResult> {
    let trained: Vec<Trained> = archs
        .par_iter()
        .map(|a| ctx.train(a, ds, None))
        .collect::<Result<_>>()?;
    let ends: Vec<EndpointSet> = trained.iter().map(|t| ctx.endpoints(t)).collect::<Result<_>>()?;
    let tags: Vec<String> = archs.iter().map(|a| a.tag()).collect();
    let k = archs.len();
    let mut matrix = vec![vec![0.0; k]; k];
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i..k {
            let s = ctx.similarity(&ends[i], &ends[j])?;
            matrix[i][j] = s.matched_mean;
            matrix[j][i] = s.matched_mean;
            if i != j {
                pairs.push(ArchPair {
                    a: tags[i].clone(),
                    b: tags[j].clone(),
                    similarity: s,
                });
            }
        }
    }
    let n = ctx.pairs();
    let panels: Vec<(String, Tensor)> = tags.iter().cloned().zip(ends.iter().map(|e| head(e, n))).collect();
    let plots = vec![
        overlay_plot(ctx, &format!("Seed-matched endpoints: {} vs {}", tags[0], tags[1]), &panels[0].1, &panels[1].1, [&tags[0], &tags[1]]),
        (
            "endpoints.svg".to_string(),
            super::svg::panels("Endpoints by architecture", &ctx.cfg.digest(), &panels),
        ),
    ];
    Ok(RunResult {
        outcome: Outcome::ArchChange(ArchOutcome { archs: tags.clone(), matrix, pairs }),
        models: trained
            .iter()
            .zip(&tags)
            .map(|(t, tag)| record(tag, t, None, ds.len()))
            .collect(),
        datasets: BTreeMap::new(),
        bank: ctx.bank,
        plots,
        extra_files: vec![],
    })
}

fn reference_set(ctx: &Ctx, ds: &DatasetBundle, r: Reference, datasets: &mut BTreeMap<String, String>) -> Result<Tensor> {
    match r {
        Reference::Training => Ok(ds.samples().clone()),
        Reference::Balanced => {
            let params = DatasetParams {
                weights: None,
                balanced: true,
                ..ds.spec().params.clone()
            };
            let spec = DatasetSpec {
                seed: crate::rng::child_seed(ctx.cfg.seed, "reference"),
                ..ds.spec().clone()
            }
            .with_params(params);
            let b = ctx.p.dataset(&spec)?;
            datasets.insert("reference-balanced".into(), b.digest().to_string());
            Ok(b.samples().clone())
        }
    }
}

struct Job {
    method: Method,
    replicate: usize,
    subset: Option<SubsetManifest>,
}

fn sweep(
    ctx: &Ctx,
    ds: &DatasetBundle,
    pc: &PruningConfig,
    datasets: &mut BTreeMap<String, String>,
) -> Result<RunResult> {
    let cfg = ctx.cfg;
    let seeds = cfg.seeds();
    let mut methods: Vec<Method> = Method::ALL.into_iter().filter(|m| pc.methods.contains(m)).collect();
    methods.dedup();
    let n_keep = keep_count(ds.len(), pc.pr);

    let mut tables: BTreeMap<&'static str, ScoreTable> = BTreeMap::new();
    let mut surrogate = None;
    if methods.iter().any(|m| m.score_kind().is_some()) {
        let s = ctx.p.surrogate(&pc.surrogate_arch, ds, &cfg.train_config())?;
        for kind in [ScoreKind::Grad, ScoreKind::Loss] {
            if methods.iter().any(|m| m.score_kind() == Some(kind)) {
                let (_, t) = ctx.p.scores(kind, &s.model, ds, &cfg.score_spec(pc))?;
                tables.insert(kind.as_str(), t);
            }
        }
        surrogate = Some(s);
    }

    let features = pc.feature_map.apply(ds.samples())?;
    let clustering: Clustering = kmeans_tagged(&features, pc.k, pc.restarts, seeds.kmeans, pc.feature_map.tag())?;
    let sizes = clustering.sizes();
    let quotas_p = allocate_quotas(&sizes, n_keep, crate::pruning::QuotaMode::Proportional)?;
    let quotas_b = allocate_quotas(&sizes, n_keep, crate::pruning::QuotaMode::Balanced)?;
    let k_max = (2 * pc.k).min(ds.len());
    let curve = inertia_curve(&features, &(1..=k_max).collect::<Vec<_>>(), pc.restarts, seeds.kmeans)?;

    let mut jobs = vec![Job {
        method: Method::Unpruned,
        replicate: 0,
        subset: None,
    }];
    for &m in &methods {
        let subsets: Vec<SubsetManifest> = match m {
            Method::Unpruned => continue,
            Method::Random => (0..pc.random_seeds)
                .map(|r| select_random(ds, pc.pr, super::config::Seeds::random_subset(cfg.seed, r)))
                .collect::<Result<_>>()?,
            _ => vec![match (m.score_kind(), m.quota_mode()) {
                (Some(kind), _) => select_top(ds, &tables[kind.as_str()], pc.pr, m.inverse())?,
                (None, Some(mode)) => {
                    let q = if mode == crate::pruning::QuotaMode::Balanced { &quotas_b } else { &quotas_p };
                    let dir = if m.inverse() { Direction::Furthest } else { Direction::Nearest };
                    let s = select_by_center_distance(ds, &clustering, q, dir, m.tag())?;
                    // Re-tag with the nominal fraction for the manifest.
                    SubsetManifest::new(ds, m.tag(), pc.pr, s.indices().to_vec())?
                }
                _ => unreachable!("every pruning method has a score or a quota mode"),
            }],
        };
        for (r, s) in subsets.into_iter().enumerate() {
            jobs.push(Job {
                method: m,
                replicate: r,
                subset: Some(s),
            });
        }
    }

    let trained: Vec<Trained> = jobs
        .par_iter()
        .map(|j| ctx.train(&cfg.arch, ds, j.subset.as_ref()))
        .collect::<Result<_>>()?;
    let ends: Vec<EndpointSet> = trained.iter().map(|t| ctx.endpoints(t)).collect::<Result<_>>()?;
    let refs: Vec<Tensor> = pc
        .references
        .iter()
        .map(|&r| reference_set(ctx, ds, r, datasets))
        .collect::<Result<_>>()?;

    let n_f = cfg.eval.frechet_samples;
    let unpruned = &ends[0];
    let mut rows = Vec::new();
    let mut rows_for_plot = Vec::new();
    for m in std::iter::once(Method::Unpruned).chain(methods.iter().copied().filter(|&m| m != Method::Unpruned)) {
        let idx: Vec<usize> = (0..jobs.len()).filter(|&i| jobs[i].method == m).collect();
        let mut fr = vec![Vec::new(); refs.len()];
        let mut sims = Vec::new();
        for &i in &idx {
            let gen = head(&ends[i], n_f);
            for (r, reference) in refs.iter().enumerate() {
                fr[r].push(frechet_distance(&gen, reference)?.d2);
            }
            sims.push(ctx.similarity(&ends[i], unpruned)?);
        }
        let (frechet, frechet_std): (Vec<f64>, Vec<f64>) = fr.iter().map(|v| mean_std(v)).unzip();
        let avg = |f: fn(&SimilarityReport) -> f64| sims.iter().map(f).sum::<f64>() / sims.len() as f64;
        if m != Method::Unpruned || methods.contains(&Method::Unpruned) {
            rows.push(SweepRow {
                method: m,
                label: m.label().to_string(),
                kept: jobs[idx[0]].subset.as_ref().map_or(ds.len(), |s| s.len()),
                frechet,
                frechet_std,
                replicates: idx.len(),
                similarity_mean: avg(|s| s.matched_mean),
                similarity_std: avg(|s| s.matched_std),
                shuffled_mean: avg(|s| s.shuffled_mean),
                shuffled_std: avg(|s| s.shuffled_std),
            });
        }
        rows_for_plot.push((m.label().to_string(), head(&ends[idx[0]], ctx.pairs())));
    }

    let mut models: Vec<ModelRecord> = jobs
        .iter()
        .zip(&trained)
        .map(|(j, t)| {
            let role = if j.method == Method::Random {
                format!("random-{}", j.replicate)
            } else {
                j.method.tag().to_string()
            };
            record(&role, t, j.subset.as_ref(), ds.len())
        })
        .collect();
    if let Some(s) = &surrogate {
        models.insert(0, record("surrogate", s, None, ds.len()));
    }
    let digest = cfg.digest();
    Ok(RunResult {
        outcome: Outcome::PruningSweep(SweepOutcome {
            pr: pc.pr,
            references: pc.references.clone(),
            rows,
            cluster_sizes: sizes,
            quotas_proportional: quotas_p,
            quotas_balanced: quotas_b,
            inertia_curve: curve.clone(),
        }),
        models,
        datasets: BTreeMap::new(),
        bank: ctx.bank,
        plots: vec![("endpoints.svg".into(), super::svg::panels("Endpoints by pruning method", &digest, &rows_for_plot))],
        extra_files: vec![
            ("clusters.csv".into(), clustering.to_csv()),
            ("inertia.csv".into(), crate::pruning::inertia_csv(&curve)),
        ],
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn overlay_plot(ctx: &Ctx, title: &str, a: &Tensor, b: &Tensor, names: [&str; 2]) -> (String, String) {
    (
        "overlay.svg".to_string(),
        super::svg::overlay(title, &ctx.cfg.digest(), a, b, names),
    )
}

fn traj_plot(ctx: &Ctx, title: &str, models: &[(&str, &Trained)]) -> Result<(String, String)> {
    let mut sets = Vec::new();
    for (name, t) in models {
        sets.push((name.to_string(), ctx.trajectories(t, 24)?));
    }
    Ok((
        "trajectories.svg".to_string(),
        super::svg::trajectories(title, &ctx.cfg.digest(), &sets),
    ))
}
