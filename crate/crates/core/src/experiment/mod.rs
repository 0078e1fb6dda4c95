//! Config-driven experiments over the content-addressed store.
//!
//! A run writes its artifacts under their own keys and its outputs under
//! `<store>/<config digest>/`: `manifest.json`, `metrics.json`,
//! `report.md`, `metrics.csv`, SVG figures, and a `timings.json` sidecar
//! that is the only file allowed to differ between identical runs.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod runs;
pub mod store;
pub mod svg;

pub use config::{Experiment, ExperimentConfig, PruningConfig, Reference, Seeds};
pub use pipeline::Pipeline;
pub use runs::{ModelRecord, Outcome};
pub use store::Store;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::sampler::{NoiseBank, SamplerSpec};
use crate::train::TrainTrace;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";
pub const REPORT: &str = "report.md";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TIMINGS: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub config_digest: String,
    pub kind: String,
    pub master_seed: u64,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
    pub datasets: BTreeMap<String, String>,
    pub models: Vec<ModelRecord>,
    pub traces: BTreeMap<String, TrainTrace>,
    pub noise_bank: NoiseBank,
    pub sampler: SamplerSpec,
    /// SHA-256 of every emitted output file.
    pub files: BTreeMap<String, String>,
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub outcome: Outcome,
    pub dir: std::path::PathBuf,
}

/// Runs `cfg` and writes its outputs; artifacts already in the store are
/// reused.
pub fn run_experiment(cfg: &ExperimentConfig, store: &Store, quiet: bool) -> Result<RunOutput> {
    cfg.validate()?;
    let pipeline = Pipeline::new(store).quiet(quiet);
    let res = runs::run(cfg, &pipeline)?;
    let digest = cfg.digest();

    let mut files: Vec<(String, Vec<u8>)> = vec![
        (METRICS.into(), pretty(&res.outcome)?),
        (
            REPORT.into(),
            report::markdown(cfg.experiment.kind(), &digest, &res.outcome, &res.models).into_bytes(),
        ),
        (METRICS_CSV.into(), report::csv(&res.outcome).into_bytes()),
    ];
    for (name, body) in res.plots.iter().chain(&res.extra_files) {
        files.push((name.clone(), body.clone().into_bytes()));
    }

    let mut traces = BTreeMap::new();
    for m in &res.models {
        let bytes = store.require(&m.checkpoint, pipeline::TRACE_FILE, "training trace", "train")?;
        traces.insert(m.role.clone(), serde_json::from_slice(&bytes)?);
    }
    let manifest = RunManifest {
        format: "fmlab.run/1".into(),
        tool_version: crate::TOOL_VERSION.into(),
        config_digest: digest.clone(),
        kind: cfg.experiment.kind().into(),
        master_seed: cfg.seed,
        seeds: cfg.seeds(),
        config: cfg.clone(),
        datasets: res.datasets.clone(),
        models: res.models.clone(),
        traces,
        noise_bank: res.bank,
        sampler: cfg.sampler,
        files: files.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
    };
    for (name, bytes) in &files {
        store.put(&digest, name, bytes)?;
    }
    store.put(&digest, MANIFEST, &pretty(&manifest)?)?;
    let timings: BTreeMap<String, f64> = pipeline.timings().into_iter().collect();
    store.replace(&digest, TIMINGS, &pretty(&timings)?)?;
    Ok(RunOutput {
        manifest,
        outcome: res.outcome,
        dir: store.dir(&digest),
    })
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Re-renders `report.md` and `metrics.csv` of a finished run and returns
/// the markdown.
pub fn rebuild_report(store: &Store, config_digest: &str) -> Result<String> {
    let m: RunManifest = serde_json::from_slice(&store.require(
        config_digest,
        MANIFEST,
        "run manifest",
        "experiment run",
    )?)?;
    let outcome: Outcome = serde_json::from_slice(&store.require(config_digest, METRICS, "run metrics", "experiment run")?)?;
    let md = report::markdown(&m.kind, config_digest, &outcome, &m.models);
    for (name, body) in [(REPORT, md.as_bytes().to_vec()), (METRICS_CSV, report::csv(&outcome).into_bytes())] {
        if m.files.get(name) != Some(&sha256_hex(&body)) {
            return Err(Error::Conflict(format!(
                "re-rendered {name} differs from the recorded run output"
            )));
        }
        store.put(config_digest, name, &body)?;
    }
    Ok(md)
}
