//! Per-sample training-signal scores along shared noise paths.
//!
//! Every sample is evaluated on the same grid of timesteps
//! `t_k = (k − 0.5)/T` and the same `M` noise endpoints `x0^(m)`. The raw
//! value (squared parameter-gradient norm, or the loss itself) is divided by
//! a per-timestep normalizer and averaged over the grid.

use crate::datasets::DatasetBundle;
use crate::digest::bin::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::VelocityModel;
use crate::rng;
use crate::tensor::{Tape, Tensor};
use crate::train::fm_loss_on_tape;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Grad,
    Loss,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Grad => "grad",
            ScoreKind::Loss => "loss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Normalizer {
    /// Arithmetic mean over all samples and noise endpoints at `t_k`.
    #[default]
    ExactMean,
    /// `μ ← β·μ + (1 − β)·v`, started at the first value and advanced in
    /// sample-major, noise-minor order. Each term is divided by the estimate
    /// current at the moment it is added, so the result depends on order.
    RunningEma { beta: f64 },
}

impl Normalizer {
    pub fn tag(&self) -> String {
        match self {
            Normalizer::ExactMean => "exact-mean".into(),
            Normalizer::RunningEma { beta } => format!("running-ema({beta})"),
        }
    }
}

/// Final normalizer value over one timestep's stream.
pub fn ema_normalizer(values: &[f64], mode: Normalizer) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("normalizer stream is empty"));
    }
    match mode {
        Normalizer::ExactMean => Ok(values.iter().sum::<f64>() / values.len() as f64),
        Normalizer::RunningEma { beta } => {
            check_beta(beta)?;
            let mut it = values.iter();
            let mut mu = *it.next().expect("nonempty");
            for v in it {
                mu = beta * mu + (1.0 - beta) * v;
            }
            Ok(mu)
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("EMA β = {beta} outside (0, 1)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSpec {
    /// Noise endpoints per timestep.
    pub m: usize,
    /// Timesteps.
    pub t: usize,
    pub normalizer: Normalizer,
    pub noise_seed: u64,
}

impl Default for ScoreSpec {
    fn default() -> Self {
        Self {
            m: 2,
            t: 8,
            normalizer: Normalizer::ExactMean,
            noise_seed: 0,
        }
    }
}

impl ScoreSpec {
    pub fn t_grid(&self) -> Vec<f64> {
        (1..=self.t).map(|k| (k as f64 - 0.5) / self.t as f64).collect()
    }

    /// The `M` shared endpoints; row `m` is `counter_normal(noise_seed, m, ·)`.
    pub fn noise(&self, dim: usize) -> Vec<Vec<f64>> {
        (0..self.m as u64)
            .map(|m| {
                (0..dim as u64)
                    .map(|j| rng::counter_normal(self.noise_seed, m, j))
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.t == 0 {
            return Err(Error::invalid("M and T must be at least 1"));
        }
        if let Normalizer::RunningEma { beta } = self.normalizer {
            check_beta(beta)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHeader {
    pub method: ScoreKind,
    pub n: usize,
    pub t_grid: Vec<f64>,
    pub noise_seed: u64,
    pub noise_ids: Vec<u64>,
    pub normalizer: Normalizer,
    pub surrogate_digest: String,
    pub dataset_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub header: ScoreHeader,
    pub scores: Vec<f64>,
}

/// Raw per-sample values on the shared grid, laid out `[i][k][m]`.
pub fn raw_values(
    surrogate: &VelocityModel,
    samples: &Tensor,
    kind: ScoreKind,
    spec: &ScoreSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let (n, d) = samples.expect_matrix("score")?;
    if d != surrogate.data_dim() {
        return Err(Error::Shape {
            op: "score",
            lhs: samples.shape().to_vec(),
            rhs: vec![n, surrogate.data_dim()],
        });
    }
    let grid = spec.t_grid();
    let noise = spec.noise(d);
    let (t, m) = (spec.t, spec.m);
    let mut raw = vec![0.0; n * t * m];
    match kind {
        ScoreKind::Grad => {
            for i in 0..n {
                let x1 = Tensor::matrix(1, d, samples.row(i).to_vec())?;
                for (k, &tk) in grid.iter().enumerate() {
                    for (mi, z) in noise.iter().enumerate() {
                        let x0 = Tensor::matrix(1, d, z.clone())?;
                        let mut tape = Tape::new();
                        let (loss, _) = fm_loss_on_tape(&mut tape, surrogate, &x1, &x0, &[tk])?;
                        raw[(i * t + k) * m + mi] = tape.backward(loss)?.sq_norm()?;
                    }
                }
            }
        }
        ScoreKind::Loss => {
            // Per-row losses are independent, so each grid cell is one batch.
            for (k, &tk) in grid.iter().enumerate() {
                for (mi, z) in noise.iter().enumerate() {
                    let mut xt = Vec::with_capacity(n * d);
                    for i in 0..n {
                        xt.extend(samples.row(i).iter().zip(z).map(|(b, a)| (1.0 - tk) * a + tk * b));
                    }
                    let u = surrogate.velocity(&Tensor::matrix(n, d, xt)?, &vec![tk; n])?;
                    for i in 0..n {
                        let err: f64 = u
                            .row(i)
                            .iter()
                            .zip(samples.row(i).iter().zip(z))
                            .map(|(ui, (b, a))| (ui - (b - a)).powi(2))
                            .sum();
                        raw[(i * t + k) * m + mi] = err / d as f64;
                    }
                }
            }
        }
    }
    if let Some(p) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raw score of sample {}", p / (t * m))));
    }
    Ok(raw)
}

/// Normalizes `[i][k][m]` raw values and averages each sample over the grid.
pub fn normalize(raw: &[f64], t: usize, m: usize, mode: Normalizer) -> Result<Vec<f64>> {
    let cell = t * m;
    if cell == 0 || raw.is_empty() || raw.len() % cell != 0 {
        return Err(Error::invalid("raw score layout does not match the grid"));
    }
    let n = raw.len() / cell;
    let mut scores = vec![0.0; n];
    match mode {
        Normalizer::ExactMean => {
            let mut mu = vec![0.0; t];
            for k in 0..t {
                let stream: Vec<f64> = (0..n)
                    .flat_map(|i| (0..m).map(move |mi| raw[(i * t + k) * m + mi]))
                    .collect();
                mu[k] = ema_normalizer(&stream, mode)?;
                if !(mu[k] > 0.0) {
                    return Err(Error::NonFinite(format!("normalizer at t_{} is {}", k + 1, mu[k])));
                }
            }
            for (i, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, mu_k) in mu.iter().enumerate() {
                    let mut inner = 0.0;
                    for mi in 0..m {
                        inner += raw[(i * t + k) * m + mi] / mu_k;
                    }
                    acc += inner / m as f64;
                }
                *s = acc / t as f64;
            }
        }
        Normalizer::RunningEma { beta } => {
            check_beta(beta)?;
            let mut mu: Vec<Option<f64>> = vec![None; t];
            for (i, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, mu_k) in mu.iter_mut().enumerate() {
                    let mut inner = 0.0;
                    for mi in 0..m {
                        let v = raw[(i * t + k) * m + mi];
                        let cur = match *mu_k {
                            None => v,
                            Some(prev) => beta * prev + (1.0 - beta) * v,
                        };
                        *mu_k = Some(cur);
                        if !(cur > 0.0) {
                            return Err(Error::NonFinite(format!(
                                "running normalizer at t_{} is {cur}",
                                k + 1
                            )));
                        }
                        inner += v / cur;
                    }
                    acc += inner / m as f64;
                }
                *s = acc / t as f64;
            }
        }
    }
    Ok(scores)
}

fn score(
    kind: ScoreKind,
    surrogate: &VelocityModel,
    ds: &DatasetBundle,
    spec: &ScoreSpec,
) -> Result<ScoreTable> {
    if surrogate.step() == 0 {
        return Err(Error::invalid(format!(
            "surrogate {} has not been trained",
            &surrogate.digest()[..12]
        )));
    }
    let raw = raw_values(surrogate, ds.samples(), kind, spec)?;
    let scores = normalize(&raw, spec.t, spec.m, spec.normalizer)?;
    Ok(ScoreTable {
        header: ScoreHeader {
            method: kind,
            n: scores.len(),
            t_grid: spec.t_grid(),
            noise_seed: spec.noise_seed,
            noise_ids: (0..spec.m as u64).collect(),
            normalizer: spec.normalizer,
            surrogate_digest: surrogate.digest(),
            dataset_digest: ds.digest().to_string(),
        },
        scores,
    })
}

pub fn score_grad(surrogate: &VelocityModel, ds: &DatasetBundle, spec: &ScoreSpec) -> Result<ScoreTable> {
    score(ScoreKind::Grad, surrogate, ds, spec)
}

pub fn score_loss(surrogate: &VelocityModel, ds: &DatasetBundle, spec: &ScoreSpec) -> Result<ScoreTable> {
    score(ScoreKind::Loss, surrogate, ds, spec)
}

const MAGIC: &[u8; 4] = b"FMSC";
const VERSION: u32 = 1;

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn check_dataset(&self, ds: &DatasetBundle) -> Result<()> {
        if self.header.dataset_digest != ds.digest() || self.len() != ds.len() {
            return Err(Error::DigestMismatch {
                expected: ds.digest().to_string(),
                found: self.header.dataset_digest.clone(),
            });
        }
        Ok(())
    }

    pub fn check_surrogate(&self, surrogate: &VelocityModel) -> Result<()> {
        let d = surrogate.digest();
        if self.header.surrogate_digest != d {
            return Err(Error::DigestMismatch {
                expected: d,
                found: self.header.surrogate_digest.clone(),
            });
        }
        Ok(())
    }

    /// `"FMSC" | version | header JSON | n × f64 | checksum`.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&serde_json::to_string(&self.header).expect("header serializes"));
        w.f64s(&self.scores);
        w.finish()
    }

    pub fn decode(file: &[u8]) -> Result<Self> {
        let mut r = Reader::open(file, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("score table version {version}, expected {VERSION}")));
        }
        let header: ScoreHeader = serde_json::from_str(&r.str()?)?;
        let scores = r.f64s(header.n)?;
        r.finish()?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("stored scores".into()));
        }
        Ok(Self { header, scores })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
