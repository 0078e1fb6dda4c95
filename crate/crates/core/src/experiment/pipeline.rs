//! Cached pipeline stages shared by the experiment runners and CLI verbs.

use super::store::Store;
use crate::datasets::{generate, DatasetBundle, DatasetSpec, SubsetManifest};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::model::{Arch, VelocityModel};
use crate::pruning::{score_grad, score_loss, ScoreKind, ScoreSpec, ScoreTable};
use crate::sampler::{sample, EndpointSet, NoiseBank, SamplerSpec};
use crate::train::{train, TrainConfig, TrainTrace};
use serde_json::json;
use std::sync::Mutex;
use std::time::Instant;

pub const DATASET_FILE: &str = "dataset.fmds";
pub const SUBSET_FILE: &str = "subset.json";
pub const MODEL_FILE: &str = "model.fmck";
pub const TRACE_FILE: &str = "trace.json";
pub const SCORES_FILE: &str = "scores.fmsc";
pub const ENDPOINTS_FILE: &str = "endpoints.fmep";

/// A trained model with the store key it lives under.
#[derive(Clone, Debug)]
pub struct Trained {
    pub key: String,
    pub model: VelocityModel,
    pub trace: TrainTrace,
}

pub struct Pipeline<'a> {
    store: &'a Store,
    timings: Mutex<Vec<(String, f64)>>,
    quiet: bool,
}

impl<'a> Pipeline<'a> {
    pub fn new(store: &'a Store) -> Self {
        Self {
            store,
            timings: Mutex::new(Vec::new()),
            quiet: false,
        }
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    pub fn store(&self) -> &Store {
        self.store
    }

    /// `(stage, seconds)` for every stage built in this process.
    pub fn timings(&self) -> Vec<(String, f64)> {
        let mut t = self.timings.lock().expect("timings lock").clone();
        t.sort_by(|a, b| a.0.cmp(&b.0));
        t
    }

    fn note(&self, built: bool, what: &str, key: &str, started: Instant) {
        let secs = started.elapsed().as_secs_f64();
        if built {
            self.timings
                .lock()
                .expect("timings lock")
                .push((format!("{what}/{key}"), secs));
        }
        if !self.quiet {
            let verb = if built { "built" } else { "reused" };
            eprintln!("{verb} {what} {} ({secs:.1}s)", &key[..key.len().min(16)]);
        }
    }

    pub fn dataset(&self, spec: &DatasetSpec) -> Result<DatasetBundle> {
        let started = Instant::now();
        let key = spec.digest();
        if let Some(bytes) = self.store.read(&key, DATASET_FILE)? {
            let ds = DatasetBundle::decode(&bytes)?;
            if ds.spec() != spec {
                return Err(Error::Conflict(format!("dataset {key} holds a different spec")));
            }
            self.note(false, "dataset", &key, started);
            return Ok(ds);
        }
        let ds = generate(spec)?;
        self.store.put(&key, DATASET_FILE, &ds.encode())?;
        self.note(true, "dataset", &key, started);
        Ok(ds)
    }

    pub fn load_dataset(&self, key: &str) -> Result<DatasetBundle> {
        DatasetBundle::decode(&self.store.require(key, DATASET_FILE, "dataset", "dataset gen")?)
    }

    pub fn subset(&self, s: &SubsetManifest) -> Result<String> {
        let key = s.digest();
        self.store.put(&key, SUBSET_FILE, s.to_json().as_bytes())?;
        Ok(key)
    }

    pub fn load_subset(&self, key: &str, parent: &DatasetBundle) -> Result<SubsetManifest> {
        let bytes = self.store.require(key, SUBSET_FILE, "subset", "prune")?;
        let s = SubsetManifest::from_json(&String::from_utf8_lossy(&bytes))?;
        s.check_parent(parent)?;
        Ok(s)
    }

    /// Trains (or reuses) `arch` on `ds` restricted to `subset`.
    pub fn model(
        &self,
        arch: &Arch,
        ds: &DatasetBundle,
        subset: Option<&SubsetManifest>,
        cfg: &TrainConfig,
        init_seed: u64,
    ) -> Result<Trained> {
        let started = Instant::now();
        let recipe = json!({
            "artifact": "model",
            "arch": arch.tag(),
            "dataset": ds.digest(),
            "subset": subset.map(|s| s.digest()),
            "train": cfg,
            "init_seed": init_seed,
        });
        let key = json_digest(&recipe);
        if let (Some(m), Some(t)) = (
            self.store.read(&key, MODEL_FILE)?,
            self.store.read(&key, TRACE_FILE)?,
        ) {
            let model = VelocityModel::decode(&m)?;
            if model.config_digest() != key || model.arch() != arch {
                return Err(Error::Conflict(format!("checkpoint {key} does not match its recipe")));
            }
            let trace: TrainTrace = serde_json::from_slice(&t)?;
            self.note(false, "model", &key, started);
            return Ok(Trained { key, model, trace });
        }
        let data = match subset {
            Some(s) => ds.subset_samples(s)?,
            None => ds.samples().clone(),
        };
        let mut model = VelocityModel::build(arch.clone(), ds.dim(), init_seed)?;
        model.set_config_digest(key.clone());
        let trace = train(&mut model, &data, cfg)?;
        self.store.put(&key, MODEL_FILE, &model.encode())?;
        self.store.put(&key, TRACE_FILE, &serde_json::to_vec_pretty(&trace)?)?;
        self.note(true, "model", &key, started);
        Ok(Trained { key, model, trace })
    }

    /// Short-schedule surrogate: `cfg` with `surrogate_steps()` steps.
    pub fn surrogate(&self, arch: &Arch, ds: &DatasetBundle, cfg: &TrainConfig) -> Result<Trained> {
        let short = TrainConfig {
            steps: cfg.surrogate_steps(),
            ..cfg.clone()
        };
        self.model(arch, ds, None, &short, cfg.init_seed())
    }

    pub fn load_model(&self, key: &str) -> Result<VelocityModel> {
        let m = VelocityModel::decode(&self.store.require(key, MODEL_FILE, "checkpoint", "train")?)?;
        if m.config_digest() != key {
            return Err(Error::DigestMismatch {
                expected: key.to_string(),
                found: m.config_digest().to_string(),
            });
        }
        Ok(m)
    }

    pub fn scores(
        &self,
        kind: ScoreKind,
        surrogate: &VelocityModel,
        ds: &DatasetBundle,
        spec: &ScoreSpec,
    ) -> Result<(String, ScoreTable)> {
        let started = Instant::now();
        let key = json_digest(&json!({
            "artifact": "scores",
            "kind": kind,
            "surrogate": surrogate.digest(),
            "dataset": ds.digest(),
            "spec": spec,
        }));
        if let Some(b) = self.store.read(&key, SCORES_FILE)? {
            let t = ScoreTable::decode(&b)?;
            t.check_dataset(ds)?;
            t.check_surrogate(surrogate)?;
            self.note(false, "scores", &key, started);
            return Ok((key, t));
        }
        let t = match kind {
            ScoreKind::Grad => score_grad(surrogate, ds, spec)?,
            ScoreKind::Loss => score_loss(surrogate, ds, spec)?,
        };
        self.store.put(&key, SCORES_FILE, &t.encode())?;
        self.note(true, "scores", &key, started);
        Ok((key, t))
    }

    pub fn load_scores(&self, key: &str) -> Result<ScoreTable> {
        ScoreTable::decode(&self.store.require(key, SCORES_FILE, "score table", "score")?)
    }

    /// Endpoints of `model` for bank samples `0..count`.
    pub fn endpoints(&self, model: &VelocityModel, bank: &NoiseBank, spec: SamplerSpec) -> Result<(String, EndpointSet)> {
        let started = Instant::now();
        let key = json_digest(&json!({
            "artifact": "endpoints",
            "model": model.digest(),
            "bank": bank,
            "sampler": spec,
        }));
        if let Some(b) = self.store.read(&key, ENDPOINTS_FILE)? {
            let e = EndpointSet::decode(&b)?;
            self.note(false, "endpoints", &key, started);
            return Ok((key, e));
        }
        let indices: Vec<usize> = (0..bank.count).collect();
        let e = sample(model, bank, &indices, spec)?;
        self.store.put(&key, ENDPOINTS_FILE, &e.encode())?;
        self.note(true, "endpoints", &key, started);
        Ok((key, e))
    }

    pub fn load_endpoints(&self, key: &str) -> Result<EndpointSet> {
        EndpointSet::decode(&self.store.require(key, ENDPOINTS_FILE, "endpoint set", "sample")?)
    }
}
