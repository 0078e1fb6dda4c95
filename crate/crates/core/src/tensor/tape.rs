//! Define-by-run reverse-mode tape.
//!
//! Each forward op appends a node holding its value and parent indices, so
//! parents always precede children and the backward sweep is a single
//! reverse pass. A tape is built per forward pass and dropped afterwards.

use super::kernels::{gemm, Activation};
use super::{Tensor, add_bias, concat_cols};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    AddBias(usize, usize),
    Concat(Vec<usize>),
    Act(usize, Activation),
    Sum(usize),
    Mean(usize),
    SqNorm(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
}

/// Parameter gradients in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    entries: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| *k == v).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.entries.iter().map(|(k, g)| (*k, g))
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, g)| g).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum over all parameters of their squared gradient entries.
    pub fn sq_norm(&self) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::invalid("squared norm of an empty gradient map"));
        }
        Ok(self.entries.iter().map(|(_, g)| g.sq_norm()).sum())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn params(&self) -> impl Iterator<Item = Var> + '_ {
        self.params.iter().map(|&i| Var(i))
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(Op::Param, t, true);
        self.params.push(v.0);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::add(self.value(a), self.value(b))?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(Op::Add(a.0, b.0), out, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::sub(self.value(a), self.value(b))?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(Op::Sub(a.0, b.0), out, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::mul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(Op::Mul(a.0, b.0), out, ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = super::scale(self.value(a), s);
        let ng = self.needs(&[a.0]);
        self.push(Op::Scale(a.0, s), out, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(Op::Matmul(a.0, b.0), out, ng))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = add_bias(self.value(x), self.value(bias))?;
        let ng = self.needs(&[x.0, bias.0]);
        Ok(self.push(Op::AddBias(x.0, bias.0), out, ng))
    }

    /// `x·W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = concat_cols(&vals)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.needs(&ids);
        Ok(self.push(Op::Concat(ids), out, ng))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        let out = super::activate(self.value(a), act);
        let ng = self.needs(&[a.0]);
        self.push(Op::Act(a.0, act), out, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Silu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = super::sum(self.value(a));
        let ng = self.needs(&[a.0]);
        self.push(Op::Sum(a.0), out, ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = super::mean(self.value(a))?;
        let ng = self.needs(&[a.0]);
        Ok(self.push(Op::Mean(a.0), out, ng))
    }

    pub fn sq_norm(&mut self, a: Var) -> Var {
        let out = super::squared_norm(self.value(a));
        let ng = self.needs(&[a.0]);
        self.push(Op::SqNorm(a.0), out, ng)
    }

    /// Reverse sweep from a scalar `root`. Every registered parameter gets an
    /// entry; parameters the root does not depend on get exact zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::invalid(format!(
                "backward root must be a scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param => param_grads[i] = Some(g),
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                    self.accumulate(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                    self.accumulate(&mut grads, *b, || super::scale(&g, -1.0));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    self.accumulate(&mut grads, *a, || {
                        super::mul(&g, bv).expect("forward shapes conform")
                    });
                    self.accumulate(&mut grads, *b, || {
                        super::mul(&g, av).expect("forward shapes conform")
                    });
                }
                Op::Scale(a, s) => {
                    self.accumulate(&mut grads, *a, || super::scale(&g, *s));
                }
                Op::Matmul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, k) = (av.shape[0], av.shape[1]);
                    let n = bv.shape[1];
                    // dA = G·Bᵀ
                    self.accumulate(&mut grads, *a, || {
                        let mut da = Tensor::zeros(&[m, k]);
                        gemm(
                            m,
                            n,
                            k,
                            (&g.data, n as isize, 1),
                            (&bv.data, 1, n as isize),
                            &mut da.data,
                            0.0,
                        );
                        da
                    });
                    // dB = Aᵀ·G
                    self.accumulate(&mut grads, *b, || {
                        let mut db = Tensor::zeros(&[k, n]);
                        gemm(
                            k,
                            m,
                            n,
                            (&av.data, 1, k as isize),
                            (&g.data, n as isize, 1),
                            &mut db.data,
                            0.0,
                        );
                        db
                    });
                }
                Op::AddBias(x, bias) => {
                    self.accumulate(&mut grads, *x, || g.clone());
                    self.accumulate(&mut grads, *bias, || {
                        let n = g.shape[1];
                        let mut db = vec![0.0; n];
                        for row in g.data.chunks_exact(n) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        Tensor {
                            shape: self.nodes[*bias].value.shape.clone(),
                            data: db,
                        }
                    });
                }
                Op::Concat(ids) => {
                    let m = g.shape[0];
                    let total = g.shape[1];
                    let mut offset = 0;
                    for &p in ids {
                        let w = self.nodes[p].value.shape[1];
                        self.accumulate(&mut grads, p, || {
                            let mut data = Vec::with_capacity(m * w);
                            for r in 0..m {
                                data.extend_from_slice(
                                    &g.data[r * total + offset..r * total + offset + w],
                                );
                            }
                            Tensor {
                                shape: vec![m, w],
                                data,
                            }
                        });
                        offset += w;
                    }
                }
                Op::Act(a, act) => {
                    let x = &self.nodes[*a].value;
                    let y = &node.value;
                    self.accumulate(&mut grads, *a, || Tensor {
                        shape: x.shape.clone(),
                        data: g
                            .data
                            .iter()
                            .zip(x.data.iter().zip(&y.data))
                            .map(|(gv, (&xv, &yv))| gv * act.derivative(xv, yv))
                            .collect(),
                    });
                }
                Op::Sum(a) => {
                    let s = g.data[0];
                    self.accumulate(&mut grads, *a, || {
                        Tensor::full(&self.nodes[*a].value.shape, s)
                    });
                }
                Op::Mean(a) => {
                    let x = &self.nodes[*a].value;
                    let s = g.data[0] / x.len() as f64;
                    self.accumulate(&mut grads, *a, || Tensor::full(&x.shape, s));
                }
                Op::SqNorm(a) => {
                    let s = 2.0 * g.data[0];
                    self.accumulate(&mut grads, *a, || super::scale(&self.nodes[*a].value, s));
                }
            }
        }

        let entries = self
            .params
            .iter()
            .map(|&p| {
                let g = param_grads[p]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(&self.nodes[p].value.shape));
                (Var(p), g)
            })
            .collect();
        Ok(Gradients { entries })
    }

    /// Adds `contrib()` into the gradient slot of `parent`, summing it down to
    /// a scalar when the parent was broadcast.
    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        parent: usize,
        contrib: impl FnOnce() -> Tensor,
    ) {
        let pnode = &self.nodes[parent];
        if !pnode.needs_grad {
            return;
        }
        let mut c = contrib();
        if pnode.value.is_scalar() && c.len() != 1 {
            c = Tensor {
                shape: pnode.value.shape.clone(),
                data: vec![c.data.iter().sum()],
            };
        }
        match &mut grads[parent] {
            Some(acc) => {
                for (a, v) in acc.data.iter_mut().zip(&c.data) {
                    *a += v;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn power_rule() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(w, w).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn disconnected_parameter_gets_exact_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::zeros(&[2, 2]));
        let y = tape.sq_norm(w);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[2, 2]));
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn grad_sq_norm_examples() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.5, 2.0]));
        let y = tape.sq_norm(w);
        // d/dw ‖w‖² = 2w = [3, 4]
        assert_eq!(tape.backward(y).unwrap().sq_norm().unwrap(), 25.0);

        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![0.5]));
        let b = tape.param(Tensor::vector(vec![1.0]));
        let sa = tape.sq_norm(a);
        let sb = tape.sq_norm(b);
        let y = tape.add(sa, sb).unwrap();
        // gradients [1] and [2]
        assert_eq!(tape.backward(y).unwrap().sq_norm().unwrap(), 5.0);
    }

    #[test]
    fn empty_gradient_map_is_an_error() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        let g = tape.backward(c).unwrap();
        assert!(g.sq_norm().is_err());
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let build = || {
            let mut r = rng::stream(5);
            let mut w = vec![0.0; 12];
            rng::fill_normal(&mut r, &mut w);
            let mut x = vec![0.0; 8];
            rng::fill_normal(&mut r, &mut x);
            let mut tape = Tape::new();
            let wv = tape.param(Tensor::matrix(4, 3, w).unwrap());
            let xv = tape.constant(Tensor::matrix(2, 4, x).unwrap());
            let h = tape.matmul(xv, wv).unwrap();
            let h = tape.silu(h);
            let y = tape.sum(h);
            tape.backward(y).unwrap()
        };
        assert_eq!(build(), build());
    }
}
