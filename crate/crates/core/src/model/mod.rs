//! Velocity networks `u_θ(x, t)` in several capacity and topology variants.
//!
//! | arch          | time input        | body                               |
//! |---------------|-------------------|------------------------------------|
//! | `mlp-s`       | scalar appended   | 2 × 64, SiLU                       |
//! | `mlp-xl`      | sinusoidal(16)    | 4 × 256, SiLU                      |
//! | `resmlp`      | sinusoidal(16)    | 128 wide, 3 pre-activation blocks  |
//! | `fourier-mlp` | sinusoidal(16)    | Fourier features of x, 3 × 128 tanh|
//! | `mlp:W,W[:act]` | scalar appended | custom widths                      |
//!
//! The output layer is initialised to zero, so a freshly built model has
//! `u ≡ 0` and its flow is the identity map.

mod checkpoint;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Activation, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

const SINUSOIDAL_DIM: usize = 16;
const FOURIER_FEATURES: usize = 16;
const FOURIER_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeEmbed {
    AppendScalar,
    Sinusoidal(usize),
}

impl TimeEmbed {
    fn width(self) -> usize {
        match self {
            TimeEmbed::AppendScalar => 1,
            TimeEmbed::Sinusoidal(d) => d,
        }
    }

    /// `[sin(1000·t·ω_j), cos(1000·t·ω_j)]` with `ω_j = 10000^(−j/half)`.
    fn embed(self, t: &[f64]) -> Tensor {
        match self {
            TimeEmbed::AppendScalar => Tensor::matrix(t.len(), 1, t.to_vec()).expect("n×1"),
            TimeEmbed::Sinusoidal(dim) => {
                let half = dim / 2;
                let mut data = Vec::with_capacity(t.len() * dim);
                for &tv in t {
                    for j in 0..half {
                        let w = (-(10000f64.ln()) * j as f64 / half as f64).exp();
                        data.push((1000.0 * tv * w).sin());
                    }
                    for j in 0..half {
                        let w = (-(10000f64.ln()) * j as f64 / half as f64).exp();
                        data.push((1000.0 * tv * w).cos());
                    }
                }
                Tensor::matrix(t.len(), 2 * half, data).expect("n×dim")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    MlpS,
    MlpXl,
    ResMlp,
    FourierMlp,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl Arch {
    pub fn tag(&self) -> String {
        self.to_string()
    }

    pub fn time_embed(&self) -> TimeEmbed {
        match self {
            Arch::MlpS | Arch::Mlp { .. } => TimeEmbed::AppendScalar,
            _ => TimeEmbed::Sinusoidal(SINUSOIDAL_DIM),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Arch::FourierMlp => Activation::Tanh,
            Arch::Mlp { activation, .. } => *activation,
            _ => Activation::Silu,
        }
    }

    fn input_width(&self, data_dim: usize) -> usize {
        let x = match self {
            Arch::FourierMlp => 2 * FOURIER_FEATURES,
            _ => data_dim,
        };
        x + self.time_embed().width()
    }

    /// `(name, fan_in, fan_out)` for every linear layer, output layer last.
    fn layer_plan(&self, data_dim: usize) -> Vec<(String, usize, usize)> {
        let input = self.input_width(data_dim);
        let chain = |widths: &[usize]| {
            let mut plan = Vec::new();
            let mut prev = input;
            for (i, &w) in widths.iter().enumerate() {
                plan.push((format!("hidden{i}"), prev, w));
                prev = w;
            }
            plan.push(("out".to_string(), prev, data_dim));
            plan
        };
        match self {
            Arch::MlpS => chain(&[64, 64]),
            Arch::MlpXl => chain(&[256; 4]),
            Arch::FourierMlp => chain(&[128; 3]),
            Arch::Mlp { hidden, .. } => chain(hidden),
            Arch::ResMlp => {
                let w = 128;
                let mut plan = vec![("in".to_string(), input, w)];
                for b in 0..3 {
                    plan.push((format!("block{b}.a"), w, w));
                    plan.push((format!("block{b}.b"), w, w));
                }
                plan.push(("out".to_string(), w, data_dim));
                plan
            }
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::MlpS => f.write_str("mlp-s"),
            Arch::MlpXl => f.write_str("mlp-xl"),
            Arch::ResMlp => f.write_str("resmlp"),
            Arch::FourierMlp => f.write_str("fourier-mlp"),
            Arch::Mlp { hidden, activation } => {
                let w: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                write!(f, "mlp:{}:{}", w.join(","), activation.name())
            }
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp-s" => Arch::MlpS,
            "mlp-xl" => Arch::MlpXl,
            "resmlp" => Arch::ResMlp,
            "fourier-mlp" => Arch::FourierMlp,
            other => {
                let bad = || Error::invalid(format!("unknown architecture `{other}`"));
                let rest = other.strip_prefix("mlp:").ok_or_else(bad)?;
                let mut parts = rest.split(':');
                let widths = parts.next().ok_or_else(bad)?;
                let hidden = if widths.is_empty() {
                    vec![]
                } else {
                    widths
                        .split(',')
                        .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(bad)?
                };
                let activation = match parts.next() {
                    None | Some("silu") => Activation::Silu,
                    Some("tanh") => Activation::Tanh,
                    Some("relu") => Activation::Relu,
                    Some(_) => return Err(bad()),
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Arch::Mlp { hidden, activation }
            }
        })
    }
}

impl Serialize for Arch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Arch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    arch: Arch,
    data_dim: usize,
    init_seed: u64,
    step: u64,
    config_digest: String,
    params: Vec<(String, Tensor)>,
    buffers: Vec<(String, Tensor)>,
}

impl VelocityModel {
    /// Deterministic initialisation: He-uniform for SiLU/ReLU layers,
    /// Glorot-uniform for tanh layers, zero biases, zero output layer.
    pub fn build(arch: Arch, data_dim: usize, init_seed: u64) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::invalid("data dimension must be at least 1"));
        }
        let mut r = rng::stream(init_seed);
        let act = arch.activation();
        let plan = arch.layer_plan(data_dim);
        let last = plan.len() - 1;
        let mut params = Vec::with_capacity(2 * plan.len());
        for (i, (name, fan_in, fan_out)) in plan.into_iter().enumerate() {
            let bound = match act {
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                Activation::Silu | Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            };
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| {
                    let u = rng::uniform(&mut r);
                    if i == last {
                        0.0
                    } else {
                        (2.0 * u - 1.0) * bound
                    }
                })
                .collect();
            params.push((format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w)?));
            params.push((format!("{name}.b"), Tensor::zeros(&[fan_out])));
        }
        let mut buffers = Vec::new();
        if arch == Arch::FourierMlp {
            let mut b = vec![0.0; data_dim * FOURIER_FEATURES];
            rng::fill_normal(&mut r, &mut b);
            for v in &mut b {
                *v *= FOURIER_SCALE;
            }
            buffers.push((
                "fourier.b".to_string(),
                Tensor::matrix(data_dim, FOURIER_FEATURES, b)?,
            ));
        }
        Ok(Self {
            arch,
            data_dim,
            init_seed,
            step: 0,
            config_digest: String::new(),
            params,
            buffers,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn set_config_digest(&mut self, digest: impl Into<String>) {
        self.config_digest = digest.into();
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 of the checkpoint encoding.
    pub fn digest(&self) -> String {
        sha256_hex(&self.encode())
    }

    fn input_features(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (rows, cols) = x.expect_matrix("velocity")?;
        if cols != self.data_dim {
            return Err(Error::Shape {
                op: "velocity",
                lhs: x.shape().to_vec(),
                rhs: vec![rows, self.data_dim],
            });
        }
        if t.len() != rows {
            return Err(Error::invalid(format!(
                "{} time values for a batch of {rows}",
                t.len()
            )));
        }
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("time {bad} outside [0, 1]")));
        }
        let temb = self.arch.time_embed().embed(t);
        let xfeat = match &self.arch {
            Arch::FourierMlp => {
                let proj = crate::tensor::matmul(x, &self.buffers[0].1)?;
                let p = proj.data();
                let k = FOURIER_FEATURES;
                let mut data = Vec::with_capacity(rows * 2 * k);
                for r in 0..rows {
                    data.extend(p[r * k..(r + 1) * k].iter().map(|v| (2.0 * PI * v).sin()));
                    data.extend(p[r * k..(r + 1) * k].iter().map(|v| (2.0 * PI * v).cos()));
                }
                Tensor::matrix(rows, 2 * k, data)?
            }
            _ => x.clone(),
        };
        crate::tensor::concat_cols(&[&xfeat, &temb])
    }

    /// Records the forward pass on `tape`. Parameters are registered in
    /// [`VelocityModel::params`] order.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, t: &[f64]) -> Result<(Var, Vec<Var>)> {
        let input = self.input_features(x, t)?;
        let pv: Vec<Var> = self.params.iter().map(|(_, p)| tape.param(p.clone())).collect();
        let act = self.arch.activation();
        let mut h = tape.constant(input);
        let layers = pv.len() / 2;
        let out = match self.arch {
            Arch::ResMlp => {
                h = tape.affine(h, pv[0], pv[1])?;
                for blk in 0..3 {
                    let base = 2 + 4 * blk;
                    let a = tape.activate(h, act);
                    let a = tape.affine(a, pv[base], pv[base + 1])?;
                    let a = tape.activate(a, act);
                    let a = tape.affine(a, pv[base + 2], pv[base + 3])?;
                    h = tape.add(h, a)?;
                }
                let h = tape.activate(h, act);
                tape.affine(h, pv[2 * layers - 2], pv[2 * layers - 1])?
            }
            _ => {
                for l in 0..layers - 1 {
                    h = tape.affine(h, pv[2 * l], pv[2 * l + 1])?;
                    h = tape.activate(h, act);
                }
                tape.affine(h, pv[2 * layers - 2], pv[2 * layers - 1])?
            }
        };
        Ok((out, pv))
    }

    /// Batched `u_θ(x, t)` with one time value per row.
    pub fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, x, t)?;
        let v = tape.value(out).clone();
        if !v.is_finite() {
            return Err(Error::NonFinite("velocity output".into()));
        }
        Ok(v)
    }
}
