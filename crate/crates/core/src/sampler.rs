//! Seed-matched ODE sampling.
//!
//! Integrates `dx/dt = u(x, t)` from `t = 0` (noise) to `t = 1` with a fixed
//! step `h = 1/steps`. Initial points come from a [`NoiseBank`], whose
//! sample `i` is a pure function of `(seed, i)`, so different models can be
//! compared point by point.

use crate::digest::bin::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::VelocityModel;
use crate::rng;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Euler,
    Midpoint,
    #[default]
    Rk4,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Midpoint => "midpoint",
            Method::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "midpoint" => Ok(Method::Midpoint),
            "rk4" => Ok(Method::Rk4),
            _ => Err(Error::invalid(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub method: Method,
    pub steps: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            steps: 64,
        }
    }
}

/// A time-dependent vector field evaluated on a batch of rows.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &Tensor, t: f64) -> Result<Tensor>;
    fn digest(&self) -> String;
}

impl VelocityField for VelocityModel {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn eval(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self.velocity(x, &vec![t; x.rows()])
    }

    fn digest(&self) -> String {
        VelocityModel::digest(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseBank {
    pub seed: u64,
    pub dim: usize,
    pub count: usize,
}

impl NoiseBank {
    pub fn new(seed: u64, dim: usize, count: usize) -> Self {
        Self { seed, dim, count }
    }

    pub fn sample(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.count {
            return Err(Error::invalid(format!("bank index {i} ≥ count {}", self.count)));
        }
        Ok((0..self.dim as u64)
            .map(|j| rng::counter_normal(self.seed, i as u64, j))
            .collect())
    }

    pub fn rows(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend(self.sample(i)?);
        }
        Tensor::matrix(indices.len(), self.dim, data)
    }
}

fn axpy(x: &Tensor, a: f64, k: &Tensor) -> Result<Tensor> {
    let data = x.data().iter().zip(k.data()).map(|(x, k)| x + a * k).collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

fn step<F: VelocityField + ?Sized>(field: &F, x: &Tensor, t: f64, h: f64, method: Method) -> Result<Tensor> {
    match method {
        Method::Euler => axpy(x, h, &field.eval(x, t)?),
        Method::Midpoint => {
            let k1 = field.eval(x, t)?;
            let k2 = field.eval(&axpy(x, 0.5 * h, &k1)?, t + 0.5 * h)?;
            axpy(x, h, &k2)
        }
        Method::Rk4 => {
            let k1 = field.eval(x, t)?;
            let k2 = field.eval(&axpy(x, 0.5 * h, &k1)?, t + 0.5 * h)?;
            let k3 = field.eval(&axpy(x, 0.5 * h, &k2)?, t + 0.5 * h)?;
            let k4 = field.eval(&axpy(x, h, &k3)?, t + h)?;
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    x + h / 6.0
                        * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i])
                })
                .collect();
            Tensor::from_raw(x.shape().to_vec(), data)
        }
    }
}

/// Time of step `s`. The last step lands on exactly 1.
fn time(s: usize, steps: usize) -> f64 {
    s as f64 / steps as f64
}

/// Integrates every row of `x0` and calls `visit` with each state, the
/// initial one included.
fn integrate_with<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    method: Method,
    steps: usize,
    mut visit: impl FnMut(&Tensor),
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let (_, d) = x0.expect_matrix("integrate")?;
    if d != field.dim() {
        return Err(Error::invalid(format!(
            "initial points have dim {d}, field expects {}",
            field.dim()
        )));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.clone();
    visit(&x);
    for s in 0..steps {
        x = step(field, &x, time(s, steps), h, method)?;
        if !x.is_finite() {
            return Err(Error::NonFinite(format!(
                "ODE state after step {} of {steps}",
                s + 1
            )));
        }
        visit(&x);
    }
    Ok(x)
}

/// Endpoints for a batch of initial rows.
pub fn integrate_batch<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    method: Method,
    steps: usize,
) -> Result<Tensor> {
    integrate_with(field, x0, method, steps, |_| {})
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(steps + 1) × d`, from `t = 0` to `t = 1`.
    pub points: Tensor,
    pub endpoint: Vec<f64>,
}

pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    x0: &[f64],
    method: Method,
    steps: usize,
) -> Result<Trajectory> {
    let start = Tensor::matrix(1, x0.len(), x0.to_vec())?;
    let mut points = Vec::with_capacity((steps + 1) * x0.len());
    let end = integrate_with(field, &start, method, steps, |x| points.extend_from_slice(x.data()))?;
    Ok(Trajectory {
        points: Tensor::matrix(steps + 1, x0.len(), points)?,
        endpoint: end.into_data(),
    })
}

const CHUNK: usize = 512;

/// Endpoints of one model for the bank samples `indices`, row `r` coming
/// from bank sample `indices[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EndpointSet {
    pub bank: NoiseBank,
    pub model_digest: String,
    pub spec: SamplerSpec,
    pub indices: Vec<usize>,
    pub endpoints: Tensor,
}

impl EndpointSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Whether `other` was generated from the same bank samples in the same
    /// order.
    pub fn aligned_with(&self, other: &EndpointSet) -> bool {
        self.bank == other.bank && self.indices == other.indices
    }
}

pub fn sample<F: VelocityField + ?Sized>(
    field: &F,
    bank: &NoiseBank,
    indices: &[usize],
    spec: SamplerSpec,
) -> Result<EndpointSet> {
    if field.dim() != bank.dim {
        return Err(Error::invalid(format!(
            "model dim {} does not match bank dim {}",
            field.dim(),
            bank.dim
        )));
    }
    // Rows integrate independently, so chunks fill index-addressed slots.
    let chunks: Vec<Result<Tensor>> = indices
        .par_chunks(CHUNK)
        .map(|idx| integrate_batch(field, &bank.rows(idx)?, spec.method, spec.steps))
        .collect();
    let mut data = Vec::with_capacity(indices.len() * bank.dim);
    for c in chunks {
        data.extend_from_slice(c?.data());
    }
    Ok(EndpointSet {
        bank: *bank,
        model_digest: field.digest(),
        spec,
        indices: indices.to_vec(),
        endpoints: Tensor::matrix(indices.len(), bank.dim, data)?,
    })
}

/// Endpoint sets of every model from the same bank samples.
pub fn generate_matched<F: VelocityField + ?Sized>(
    models: &[&F],
    bank: &NoiseBank,
    indices: &[usize],
    spec: SamplerSpec,
) -> Result<Vec<EndpointSet>> {
    models.iter().map(|m| sample(*m, bank, indices, spec)).collect()
}

const MAGIC: &[u8; 4] = b"FMEP";
const VERSION: u32 = 1;

impl EndpointSet {
    /// `"FMEP" | version | bank seed, dim, count | model digest | method |
    /// steps | n | indices | n × d f64 | checksum`.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.bank.seed);
        w.u64(self.bank.dim as u64);
        w.u64(self.bank.count as u64);
        w.str(&self.model_digest);
        w.str(self.spec.method.as_str());
        w.u64(self.spec.steps as u64);
        w.u64(self.indices.len() as u64);
        for &i in &self.indices {
            w.u64(i as u64);
        }
        w.f64s(self.endpoints.data());
        w.finish()
    }

    pub fn decode(file: &[u8]) -> Result<Self> {
        let mut r = Reader::open(file, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("endpoint file version {version}, expected {VERSION}")));
        }
        let bank = NoiseBank::new(r.u64()?, r.u64()? as usize, r.u64()? as usize);
        let model_digest = r.str()?;
        let method: Method = r.str()?.parse()?;
        let steps = r.u64()? as usize;
        let n = r.u64()? as usize;
        if n > file.len() / 8 {
            return Err(Error::format("endpoint count exceeds file size"));
        }
        let indices = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let endpoints = Tensor::matrix(n, bank.dim, r.f64s(n * bank.dim)?)?;
        r.finish()?;
        Ok(Self {
            bank,
            model_digest,
            spec: SamplerSpec { method, steps },
            indices,
            endpoints,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
