//! Flow-matching objective and Adam training loop.
//!
//! Convention: `t = 0` is noise and `t = 1` is data. For a noise point
//! `x0`, a data point `x1` and `t ∈ [0, 1]` the interpolant is
//! `(1 − t)·x0 + t·x1` and the regression target is `x1 − x0`. The loss is
//! the squared error averaged over batch rows and coordinates.

use crate::datasets::{DatasetBundle, SubsetManifest};
use crate::error::{Error, Result};
use crate::model::{Arch, VelocityModel};
use crate::rng::{self, Counted};
use crate::tensor::{Gradients, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::time::Instant;

const EVAL_BATCH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimeDist {
    #[default]
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t_dist: TimeDist,
    pub seed: u64,
    pub surrogate_fraction: f64,
    /// Steps per entry of the loss trace.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t_dist: TimeDist::Uniform,
            seed: 0,
            surrogate_fraction: 0.07,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch == 0 || self.log_every == 0 {
            return bad("batch and log_every must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.surrogate_fraction > 0.0 && self.surrogate_fraction <= 1.0) {
            return bad(format!(
                "surrogate_fraction must lie in (0, 1], got {}",
                self.surrogate_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam parameters out of range".into());
        }
        Ok(())
    }

    /// Step count of the short surrogate schedule, `round(fraction · steps)`.
    pub fn surrogate_steps(&self) -> usize {
        ((self.surrogate_fraction * self.steps as f64 + 0.5).floor() as usize).max(1)
    }

    pub fn init_seed(&self) -> u64 {
        rng::child_seed(self.seed, "init")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: usize,
    pub log_every: usize,
    /// Mean minibatch loss over each logging interval.
    pub interval_loss: Vec<f64>,
    /// Loss on a fixed 512-row evaluation batch before and after training.
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    /// 64-bit words drawn from the training and evaluation streams.
    pub train_stream_position: u64,
    pub eval_stream_position: u64,
    pub final_checkpoint: String,
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub fn interpolant(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    if x0.shape() != x1.shape() {
        return Err(Error::Shape {
            op: "interpolant",
            lhs: x0.shape().to_vec(),
            rhs: x1.shape().to_vec(),
        });
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Tensor::from_raw(x0.shape().to_vec(), data)
}

/// Per-row interpolants and targets for a batch.
fn batch_inputs(x1: &Tensor, x0: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor)> {
    if x1.shape() != x0.shape() {
        return Err(Error::Shape {
            op: "fm_loss",
            lhs: x1.shape().to_vec(),
            rhs: x0.shape().to_vec(),
        });
    }
    let (rows, cols) = x1.expect_matrix("fm_loss")?;
    if rows == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if t.len() != rows {
        return Err(Error::invalid(format!("{} times for {rows} rows", t.len())));
    }
    let mut xt = Vec::with_capacity(rows * cols);
    let mut target = Vec::with_capacity(rows * cols);
    for (r, &tv) in t.iter().enumerate() {
        for (a, b) in x0.row(r).iter().zip(x1.row(r)) {
            xt.push((1.0 - tv) * a + tv * b);
            target.push(b - a);
        }
    }
    Ok((
        Tensor::matrix(rows, cols, xt)?,
        Tensor::matrix(rows, cols, target)?,
    ))
}

/// Records the flow-matching loss on `tape`; returns the loss node and the
/// parameter nodes.
pub fn fm_loss_on_tape(
    tape: &mut Tape,
    model: &VelocityModel,
    x1: &Tensor,
    x0: &Tensor,
    t: &[f64],
) -> Result<(Var, Vec<Var>)> {
    let (xt, target) = batch_inputs(x1, x0, t)?;
    let n = target.len() as f64;
    let (out, params) = model.forward(tape, &xt, t)?;
    let target = tape.constant(target);
    let diff = tape.sub(out, target)?;
    let sq = tape.sq_norm(diff);
    Ok((tape.scale(sq, 1.0 / n), params))
}

pub fn fm_loss(model: &VelocityModel, x1: &Tensor, x0: &Tensor, t: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = fm_loss_on_tape(&mut tape, model, x1, x0, t)?;
    tape.value(loss).item()
}

pub fn fm_loss_and_grad(
    model: &VelocityModel,
    x1: &Tensor,
    x0: &Tensor,
    t: &[f64],
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let (loss, _) = fm_loss_on_tape(&mut tape, model, x1, x0, t)?;
    let value = tape.value(loss).item()?;
    Ok((value, tape.backward(loss)?))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &VelocityModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut VelocityModel, grads: Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let step = cfg.lr / bc1;
        for (((p, g), m), v) in model
            .params_mut()
            .zip(grads.into_tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *w -= step * *mi / ((*vi / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

fn sample_batch<R: rand::RngCore>(
    rng: &mut R,
    data: &Tensor,
    batch: usize,
) -> (Tensor, Tensor, Vec<f64>) {
    let n = data.rows();
    let idx: Vec<usize> = (0..batch).map(|_| rng::index(rng, n)).collect();
    let x1 = data.select_rows(&idx);
    let mut noise = vec![0.0; x1.len()];
    rng::fill_normal(rng, &mut noise);
    let x0 = Tensor::matrix(batch, data.cols(), noise).expect("batch×d");
    let t = (0..batch).map(|_| rng::uniform(rng)).collect();
    (x1, x0, t)
}

/// Trains `model` on the rows of `data`. Each step draws `batch` rows with
/// replacement, fresh Gaussian noise and `t ~ U(0, 1)` from the
/// `cfg.seed`-derived training stream. `steps == 0` leaves the model as is.
pub fn train(model: &mut VelocityModel, data: &Tensor, cfg: &TrainConfig) -> Result<TrainTrace> {
    let started = Instant::now();
    if data.rows() == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if data.cols() != model.data_dim() {
        return Err(Error::Shape {
            op: "train",
            lhs: data.shape().to_vec(),
            rhs: vec![data.rows(), model.data_dim()],
        });
    }
    let mut train_rng = Counted::new(rng::child_seed(cfg.seed, "train"));
    let mut eval_rng = Counted::new(rng::child_seed(cfg.seed, "eval"));
    let (ex1, ex0, et) = sample_batch(&mut eval_rng, data, EVAL_BATCH);
    let initial_eval_loss = fm_loss(model, &ex1, &ex0, &et)?;

    let mut adam = Adam::new(model);
    let mut interval_loss = Vec::new();
    let mut acc = 0.0;
    let mut in_interval = 0;
    for step in 0..cfg.steps {
        let (x1, x0, t) = sample_batch(&mut train_rng, data, cfg.batch);
        let (loss, grads) = fm_loss_and_grad(model, &x1, &x0, &t)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        adam.step(model, grads, cfg);
        acc += loss;
        in_interval += 1;
        if in_interval == cfg.log_every || step + 1 == cfg.steps {
            interval_loss.push(acc / in_interval as f64);
            acc = 0.0;
            in_interval = 0;
        }
    }
    model.set_step(model.step() + cfg.steps as u64);
    let final_eval_loss = fm_loss(model, &ex1, &ex0, &et)?;
    if !final_eval_loss.is_finite() {
        return Err(Error::Divergence {
            step: cfg.steps,
            loss: final_eval_loss,
        });
    }
    Ok(TrainTrace {
        steps: cfg.steps,
        log_every: cfg.log_every,
        interval_loss,
        initial_eval_loss,
        final_eval_loss,
        train_stream_position: train_rng.position(),
        eval_stream_position: eval_rng.position(),
        final_checkpoint: model.digest(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Trains on the rows of `ds` named by `subset` (all rows when `None`).
pub fn train_on(
    model: &mut VelocityModel,
    ds: &DatasetBundle,
    subset: Option<&SubsetManifest>,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    let data = match subset {
        Some(s) => ds.subset_samples(s)?,
        None => ds.samples().clone(),
    };
    train(model, &data, cfg)
}

/// Short-schedule surrogate of the given architecture:
/// `round(surrogate_fraction · steps)` steps, init seed from `cfg`.
pub fn train_surrogate_with(
    arch: Arch,
    data: &Tensor,
    cfg: &TrainConfig,
) -> Result<(VelocityModel, TrainTrace)> {
    let mut model = VelocityModel::build(arch, data.cols(), cfg.init_seed())?;
    let short = TrainConfig {
        steps: cfg.surrogate_steps(),
        ..cfg.clone()
    };
    let trace = train(&mut model, data, &short)?;
    Ok((model, trace))
}

/// [`train_surrogate_with`] using `mlp-s`.
pub fn train_surrogate(data: &Tensor, cfg: &TrainConfig) -> Result<(VelocityModel, TrainTrace)> {
    train_surrogate_with(Arch::MlpS, data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, DatasetName, DatasetSpec};

    #[test]
    fn interpolant_endpoints_and_midpoint() {
        let x0 = Tensor::vector(vec![0.0, 0.0]);
        let x1 = Tensor::vector(vec![2.0, 4.0]);
        assert_eq!(interpolant(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolant(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(interpolant(&x0, &x1, 0.5).unwrap().data(), &[1.0, 2.0]);
        assert!(interpolant(&x0, &Tensor::vector(vec![1.0]), 0.5).is_err());
        assert!(interpolant(&x0, &x1, 1.5).is_err());
    }

    #[test]
    fn zero_model_loss_uses_mean_over_dims() {
        let m = VelocityModel::build(Arch::MlpS, 2, 0).unwrap();
        let x0 = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let x1 = Tensor::from_rows(&[[2.0, 0.0]]).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(fm_loss(&m, &x1, &x0, &[t]).unwrap(), 2.0);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // A zero model predicts x1 − x0 exactly when the two coincide.
        let m = VelocityModel::build(Arch::MlpS, 2, 0).unwrap();
        let x = Tensor::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        assert_eq!(fm_loss(&m, &x, &x, &[0.2, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = VelocityModel::build(Arch::MlpS, 2, 0).unwrap();
        let e = Tensor::zeros(&[0, 2]);
        assert!(fm_loss(&m, &e, &e, &[]).is_err());
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let ds = generate(&DatasetSpec::new(DatasetName::EightGaussians, 64, 0)).unwrap();
        let mut m = VelocityModel::build(Arch::MlpS, 2, 0).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        train(&mut m, ds.samples(), &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = generate(&DatasetSpec::new(DatasetName::EightGaussians, 256, 0)).unwrap();
        let cfg = TrainConfig {
            steps: 50,
            batch: 32,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let mut m = VelocityModel::build(Arch::MlpS, 2, 1).unwrap();
            let tr = train(&mut m, ds.samples(), &cfg).unwrap();
            (m.encode(), tr.final_checkpoint)
        };
        let (a, da) = run();
        let (b, db) = run();
        assert_eq!(a, b);
        assert_eq!(da, db);
    }

    #[test]
    fn surrogate_schedule() {
        let cfg = TrainConfig {
            steps: 10_000,
            ..Default::default()
        };
        assert_eq!(cfg.surrogate_steps(), 700);
    }

    #[test]
    fn surrogate_at_full_fraction_equals_training() {
        let ds = generate(&DatasetSpec::new(DatasetName::TwoMoons, 128, 0)).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            batch: 16,
            seed: 4,
            surrogate_fraction: 1.0,
            ..Default::default()
        };
        let (s, _) = train_surrogate(ds.samples(), &cfg).unwrap();
        let mut m = VelocityModel::build(Arch::MlpS, 2, cfg.init_seed()).unwrap();
        train(&mut m, ds.samples(), &cfg).unwrap();
        assert_eq!(s, m);
        let (s2, _) = train_surrogate(ds.samples(), &cfg).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { steps: 0, ..Default::default() },
            TrainConfig { surrogate_fraction: 0.0, ..Default::default() },
            TrainConfig { surrogate_fraction: 1.5, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let ds = generate(&DatasetSpec::new(DatasetName::EightGaussians, 64, 0)).unwrap();
        let mut m = VelocityModel::build(Arch::MlpS, 2, 0).unwrap();
        let cfg = TrainConfig {
            steps: 50,
            batch: 8,
            lr: 1e300,
            ..Default::default()
        };
        let err = train(&mut m, ds.samples(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
