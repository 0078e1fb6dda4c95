//! Experiment configuration files (JSON).
//!
//! Seeds for every stochastic stage are derived from the single master
//! `seed` by name (see [`Seeds`]), so a config never carries per-stage
//! seeds of its own.

use crate::datasets::{DatasetName, DatasetParams, DatasetSpec};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::model::Arch;
use crate::pruning::{FeatureMap, Method, Normalizer, ScoreSpec};
use crate::rng::child_seed;
use crate::sampler::SamplerSpec;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed.
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default = "default_arch")]
    pub arch: Arch,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    pub experiment: Experiment,
}

fn default_arch() -> Arch {
    Arch::MlpS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    pub n: usize,
    #[serde(default)]
    pub params: DatasetParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed-matched pairs for similarity.
    pub pairs: usize,
    /// Generated samples per model for Fréchet distance.
    pub frechet_samples: usize,
    /// Coverage radius in units of the component standard deviation.
    pub coverage_sigmas: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pairs: 512,
            frechet_samples: 4096,
            coverage_sigmas: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    DisjointSubsets {
        #[serde(default = "half_half")]
        fractions: [f64; 2],
    },
    ModeRemoval {
        drop: Vec<u32>,
    },
    DataSwap {
        /// Generator of the second dataset; same family when absent.
        #[serde(default)]
        name: Option<DatasetName>,
        params: DatasetParams,
    },
    ArchChange {
        #[serde(default = "default_archs")]
        archs: Vec<Arch>,
    },
    PruningSweep(PruningConfig),
}

fn half_half() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_archs() -> Vec<Arch> {
    vec![Arch::MlpXl, Arch::MlpS, Arch::ResMlp]
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::DisjointSubsets { .. } => "disjoint-subsets",
            Experiment::ModeRemoval { .. } => "mode-removal",
            Experiment::DataSwap { .. } => "data-swap",
            Experiment::ArchChange { .. } => "arch-change",
            Experiment::PruningSweep(_) => "pruning-sweep",
        }
    }
}

/// Distribution the Fréchet distances of a sweep are measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// The (possibly imbalanced) training set itself.
    #[default]
    Training,
    /// A fresh draw from the same generator with balanced labels.
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    pub pr: f64,
    pub methods: Vec<Method>,
    pub random_seeds: usize,
    pub k: usize,
    pub restarts: usize,
    pub feature_map: FeatureMap,
    pub score_m: usize,
    pub score_t: usize,
    pub normalizer: Normalizer,
    pub surrogate_arch: Arch,
    /// References reported; the first one is primary.
    pub references: Vec<Reference>,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            pr: 0.5,
            methods: Method::ALL.to_vec(),
            random_seeds: 3,
            k: 8,
            restarts: 10,
            feature_map: FeatureMap::PcaWhiten,
            score_m: 2,
            score_t: 8,
            normalizer: Normalizer::ExactMean,
            surrogate_arch: Arch::MlpS,
            references: vec![Reference::Training],
        }
    }
}

/// Named child seeds of the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub dataset: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub bank: u64,
    pub shuffle: u64,
    pub score_noise: u64,
    pub kmeans: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let c = |name| child_seed(master, name);
        Self {
            dataset: c("dataset"),
            split: c("split"),
            init: c("init"),
            train: c("train"),
            bank: c("bank"),
            shuffle: c("shuffle"),
            score_noise: c("score-noise"),
            kmeans: c("kmeans"),
        }
    }

    pub fn random_subset(master: u64, replicate: usize) -> u64 {
        child_seed(master, &format!("random/{replicate}"))
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting schema violations with their path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: match e.path().to_string() {
                p if p == "." => "<root>".to_string(),
                p => p,
            },
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, message: String| {
            Err(Error::Config {
                path: path.to_string(),
                message,
            })
        };
        if self.train.seed != 0 {
            return fail("train.seed", "training seeds derive from the master `seed`".into());
        }
        if let Err(e) = self.train.validate() {
            return fail("train", e.to_string());
        }
        if self.sampler.steps == 0 {
            return fail("sampler.steps", "must be at least 1".into());
        }
        if self.eval.pairs < 2 || self.eval.frechet_samples < 3 {
            return fail("eval", "need at least 2 pairs and 3 Fréchet samples".into());
        }
        if !(self.eval.coverage_sigmas > 0.0) {
            return fail("eval.coverage_sigmas", "must be positive".into());
        }
        if self.dataset.n == 0 {
            return fail("dataset.n", "must be positive".into());
        }
        match &self.experiment {
            Experiment::DisjointSubsets { fractions } => {
                let [a, b] = *fractions;
                if !(a > 0.0 && b > 0.0 && a + b <= 1.0 + 1e-12) {
                    return fail(
                        "experiment.fractions",
                        format!("{fractions:?} cannot give two nonempty disjoint subsets"),
                    );
                }
            }
            Experiment::ArchChange { archs } if archs.len() < 2 => {
                return fail("experiment.archs", "need at least two architectures".into());
            }
            Experiment::PruningSweep(p) => {
                if !(0.0..1.0).contains(&p.pr) {
                    return fail("experiment.pr", format!("{} outside [0, 1)", p.pr));
                }
                if p.random_seeds == 0 || p.k == 0 || p.restarts == 0 || p.score_m == 0 || p.score_t == 0 {
                    return fail("experiment", "counts must be positive".into());
                }
                if p.references.is_empty() {
                    return fail("experiment.references", "need at least one reference".into());
                }
                if p.methods.is_empty() {
                    return fail("experiment.methods", "no methods listed".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Digest of the typed config with every default filled in, so it does
    /// not depend on key order or on which defaults were written out.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec::new(self.dataset.name, self.dataset.n, self.seeds().dataset)
            .with_params(self.dataset.params.clone())
    }

    /// Training config with its seed set from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().train,
            ..self.train.clone()
        }
    }

    pub fn score_spec(&self, p: &PruningConfig) -> ScoreSpec {
        ScoreSpec {
            m: p.score_m,
            t: p.score_t,
            normalizer: p.normalizer,
            noise_seed: self.seeds().score_noise,
        }
    }
}
