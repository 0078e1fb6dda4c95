use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fmlab::datasets::{keep_count, DatasetName, DatasetParams, DatasetSpec, SubsetManifest};
use fmlab::experiment::{self, ExperimentConfig, Pipeline, Seeds, Store};
use fmlab::metrics::{frechet_distance, paired_similarity};
use fmlab::model::Arch;
use fmlab::pruning::{
    allocate_quotas, kmeans_tagged, select_by_center_distance, select_random, select_top,
    Direction, FeatureMap, Method, Normalizer, ScoreKind, ScoreSpec,
};
use fmlab::sampler::{self, NoiseBank, SamplerSpec};
use fmlab::train::TrainConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fmlab", version, about = "Flow-matching stability and data-pruning experiments")]
struct Cli {
    /// Artifact store directory.
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,
    /// Worker threads (defaults to available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed; stage seeds are derived from it by name.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic datasets.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Train a velocity model on a dataset or subset.
    Train(TrainArgs),
    /// Score every sample with a trained surrogate.
    Score(ScoreArgs),
    /// Select a subset with a pruning method.
    Prune(PruneArgs),
    /// Generate endpoints from a shared noise bank.
    Sample(SampleArgs),
    /// Compare two endpoint sets.
    Eval(EvalArgs),
    /// Config-driven experiments.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    /// Re-render the report of a finished run.
    Report {
        /// Config digest or config file of the run.
        run: String,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate a dataset into the store and print its key.
    Gen {
        #[arg(long)]
        name: DatasetName,
        #[arg(long)]
        n: usize,
        /// Generator parameters as inline JSON.
        #[arg(long)]
        params: Option<String>,
        /// Also write the samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run an experiment config.
    Run { config: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    subset: Option<String>,
    #[arg(long, default_value = "mlp-s")]
    arch: Arch,
    /// Training config JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Train only the short surrogate schedule.
    #[arg(long)]
    surrogate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizerArg {
    ExactMean,
    RunningEma,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: String,
    /// Checkpoint key of the surrogate.
    #[arg(long)]
    surrogate: String,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    t: usize,
    #[arg(long, value_enum, default_value = "exact-mean")]
    normalizer: NormalizerArg,
    #[arg(long, default_value_t = 0.99)]
    beta: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Grad,
    Loss,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    pr: f64,
    /// Score table key (grad and loss methods).
    #[arg(long)]
    scores: Option<String>,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, value_enum, default_value = "pca-whiten")]
    feature_map: FeatureArg,
    /// Replicate index for random subsets.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Identity,
    PcaWhiten,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: String,
    #[arg(long, default_value_t = 4096)]
    count: usize,
    #[arg(long, default_value = "rk4")]
    method: sampler::Method,
    #[arg(long, default_value_t = 64)]
    steps: usize,
    /// Also copy the endpoint file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Endpoint set keys.
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    /// Dataset key to measure both sets against.
    #[arg(long)]
    reference: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<fmlab::Error>())
                .map_or(1, fmlab::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let store = Store::open(&cli.store)?;
    let p = Pipeline::new(&store).quiet(cli.quiet);
    let seed = cli.seed.unwrap_or(0);
    let seeds = Seeds::from_master(seed);
    match cli.cmd {
        Cmd::Dataset {
            cmd: DatasetCmd::Gen { name, n, params, csv },
        } => {
            let params: DatasetParams = match params {
                Some(text) => serde_json::from_str(&text).map_err(|e| fmlab::Error::Config {
                    path: "--params".into(),
                    message: e.to_string(),
                })?,
                None => DatasetParams::default(),
            };
            let spec = DatasetSpec::new(name, n, seeds.dataset).with_params(params);
            let ds = p.dataset(&spec)?;
            if let Some(path) = csv {
                ds.write_csv(std::fs::File::create(&path)?)?;
            }
            println!("{}", spec.digest());
        }
        Cmd::Train(a) => {
            let ds = p.load_dataset(&a.dataset)?;
            let subset = a.subset.as_deref().map(|k| p.load_subset(k, &ds)).transpose()?;
            let mut cfg: TrainConfig = match &a.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize(de).map_err(|e| fmlab::Error::Config {
                        path: e.path().to_string(),
                        message: e.inner().to_string(),
                    })?
                }
                None => TrainConfig::default(),
            };
            cfg.steps = a.steps.unwrap_or(cfg.steps);
            cfg.batch = a.batch.unwrap_or(cfg.batch);
            cfg.seed = seeds.train;
            cfg.validate().map_err(|e| fmlab::Error::Config {
                path: "train".into(),
                message: e.to_string(),
            })?;
            let t = if a.surrogate {
                if subset.is_some() {
                    bail!("surrogates train on the full dataset");
                }
                p.surrogate(&a.arch, &ds, &cfg)?
            } else {
                p.model(&a.arch, &ds, subset.as_ref(), &cfg, seeds.init)?
            };
            eprintln!(
                "eval loss {:.4} -> {:.4} over {} steps",
                t.trace.initial_eval_loss, t.trace.final_eval_loss, t.trace.steps
            );
            println!("{}", t.key);
        }
        Cmd::Score(a) => {
            let ds = p.load_dataset(&a.dataset)?;
            let surrogate = p.load_model(&a.surrogate)?;
            let spec = ScoreSpec {
                m: a.m,
                t: a.t,
                normalizer: match a.normalizer {
                    NormalizerArg::ExactMean => Normalizer::ExactMean,
                    NormalizerArg::RunningEma => Normalizer::RunningEma { beta: a.beta },
                },
                noise_seed: seeds.score_noise,
            };
            let kind = match a.kind {
                KindArg::Grad => ScoreKind::Grad,
                KindArg::Loss => ScoreKind::Loss,
            };
            let (key, _) = p.scores(kind, &surrogate, &ds, &spec)?;
            println!("{key}");
        }
        Cmd::Prune(a) => {
            let ds = p.load_dataset(&a.dataset)?;
            let subset = prune(&p, &ds, &a, seed)?;
            eprintln!("kept {} of {}", subset.len(), ds.len());
            println!("{}", p.subset(&subset)?);
        }
        Cmd::Sample(a) => {
            let model = p.load_model(&a.checkpoint)?;
            let bank = NoiseBank::new(seeds.bank, model.data_dim(), a.count);
            let spec = SamplerSpec {
                method: a.method,
                steps: a.steps,
            };
            let (key, set) = p.endpoints(&model, &bank, spec)?;
            if let Some(out) = a.out {
                set.save(out)?;
            }
            println!("{key}");
        }
        Cmd::Eval(a) => {
            let ea = p.load_endpoints(&a.a)?;
            let eb = p.load_endpoints(&a.b)?;
            if !ea.aligned_with(&eb) {
                bail!("endpoint sets were not generated from the same bank samples");
            }
            let sim = paired_similarity(&ea.endpoints, &eb.endpoints, seeds.shuffle)?;
            let mut out = serde_json::json!({
                "similarity": sim,
                "frechet_between": frechet_distance(&ea.endpoints, &eb.endpoints)?.d2,
            });
            if let Some(r) = a.reference {
                let ds = p.load_dataset(&r)?;
                out["frechet_a_reference"] = frechet_distance(&ea.endpoints, ds.samples())?.d2.into();
                out["frechet_b_reference"] = frechet_distance(&eb.endpoints, ds.samples())?.d2.into();
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Experiment {
            cmd: ExperimentCmd::Run { config },
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = experiment::run_experiment(&cfg, &store, cli.quiet)?;
            print!("{}", std::fs::read_to_string(out.dir.join(experiment::REPORT))?);
            eprintln!("outputs in {}", out.dir.display());
        }
        Cmd::Report { run } => {
            let digest = if std::path::Path::new(&run).is_file() {
                let mut cfg = ExperimentConfig::load(&run)?;
                if let Some(s) = cli.seed {
                    cfg.seed = s;
                }
                cfg.digest()
            } else {
                run
            };
            print!("{}", experiment::rebuild_report(&store, &digest)?);
        }
    }
    Ok(())
}

fn prune(
    p: &Pipeline,
    ds: &fmlab::datasets::DatasetBundle,
    a: &PruneArgs,
    seed: u64,
) -> Result<SubsetManifest> {
    let seeds = Seeds::from_master(seed);
    let m = a.method;
    if let Some(kind) = m.score_kind() {
        let key = a.scores.as_deref().ok_or_else(|| fmlab::Error::MissingArtifact {
            what: format!("{} score table (pass --scores)", kind.as_str()),
            producer: "score".into(),
        })?;
        let table = p.load_scores(key)?;
        if table.header.method != kind {
            bail!("score table holds {} scores, method {m} needs {}", table.header.method.as_str(), kind.as_str());
        }
        return Ok(select_top(ds, &table, a.pr, m.inverse())?);
    }
    if let Some(mode) = m.quota_mode() {
        let fmap = match a.feature_map {
            FeatureArg::Identity => FeatureMap::Identity,
            FeatureArg::PcaWhiten => FeatureMap::PcaWhiten,
        };
        let features = fmap.apply(ds.samples())?;
        let c = kmeans_tagged(&features, a.k, a.restarts, seeds.kmeans, fmap.tag())?;
        let quotas = allocate_quotas(&c.sizes(), keep_count(ds.len(), a.pr), mode)?;
        let dir = if m.inverse() { Direction::Furthest } else { Direction::Nearest };
        let s = select_by_center_distance(ds, &c, &quotas, dir, m.tag())?;
        return Ok(SubsetManifest::new(ds, m.tag(), a.pr, s.indices().to_vec())?);
    }
    match m {
        Method::Random => Ok(select_random(ds, a.pr, Seeds::random_subset(seed, a.replicate))?),
        Method::Unpruned => Ok(SubsetManifest::full(ds)),
        _ => bail!("unsupported method {m}"),
    }
}
