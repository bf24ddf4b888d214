//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node in creation order, so a
//! reverse sweep over node indices is a valid topological order. Nodes
//! that do not depend on any parameter are never visited in the backward
//! pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::optim::{GradMap, ParamSet};
use crate::tensor::{softmax_row_in_place, Tensor};

/// Floor applied inside [`Graph::log`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softmax(Var),
    TempScale { x: Var, log_temp: Var },
    Log(Var),
    Sum(Var),
    SumSquares(Var),
    Grl(Var, f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Parameter name → leaf node, produced by [`Graph::bind`].
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Consistency(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward sweep: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every bound parameter; unreachable parameters get zeros.
    pub fn for_params(&self, vars: &ParamVars) -> GradMap {
        let mut out = GradMap::new();
        for (name, v) in vars.iter() {
            let g = match &self.grads[v.0] {
                Some(g) => g.clone(),
                None => Tensor::zeros(&self.shapes[v.0]),
            };
            out.insert(name, g);
        }
        out
    }
}

impl Graph {
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

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Smallest |input| over all ReLU nodes, or infinity if there are none.
    /// Finite-difference checks use it to stay away from the kink.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds every parameter of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> ParamVars {
        let mut vars = BTreeMap::new();
        for (name, value) in params.iter() {
            vars.insert(name.to_string(), self.variable(value.clone()));
        }
        ParamVars { vars }
    }

    /// Like [`Graph::bind`] but as constants, for inference-only passes.
    pub fn bind_frozen(&mut self, params: &ParamSet) -> ParamVars {
        let mut vars = BTreeMap::new();
        for (name, value) in params.iter() {
            vars.insert(name.to_string(), self.constant(value.clone()));
        }
        ParamVars { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x[B×n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.shape().len() != 2 || bv.numel() != xv.cols() {
            return Err(Error::shape(format!(
                "bias {:?} does not broadcast over {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let n = xv.cols();
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(n.max(1)) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.needs(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `1 − a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.needs(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise softmax at unit temperature.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let mut value = self.value(logits).clone();
        if value.shape().len() != 2 || value.cols() < 2 {
            return Err(Error::shape(format!(
                "softmax needs a [B×C] matrix with C ≥ 2, got {:?}",
                value.shape()
            )));
        }
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            softmax_row_in_place(row, 1.0);
        }
        let rg = self.needs(logits);
        Ok(self.push(value, Op::Softmax(logits), rg))
    }

    /// `x · exp(−θ)` where `log_temp` holds the scalar θ, i.e. `x / T` with `T = exp(θ)`.
    pub fn temp_scale(&mut self, x: Var, log_temp: Var) -> Result<Var> {
        let theta = self.value(log_temp).item()?;
        let inv_t = (-theta).exp();
        let value = self.value(x).map(|v| v * inv_t);
        let rg = self.needs(x) || self.needs(log_temp);
        Ok(self.push(value, Op::TempScale { x, log_temp }, rg))
    }

    /// Natural log with inputs floored at [`LOG_CLAMP`]; no gradient below the floor.
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(LOG_CLAMP).ln());
        let rg = self.needs(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let s = self.sum(a);
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Squared L2 norm over all entries.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().map(|x| x * x).sum());
        let rg = self.needs(a);
        self.push(value, Op::SumSquares(a), rg)
    }

    /// Gradient reversal: identity forward, upstream gradient times `−lambda` backward.
    pub fn grl(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "gradient reversal weight must be non-negative, got {lambda}"
            )));
        }
        let value = self.value(a).clone();
        let rg = self.needs(a);
        Ok(self.push(value, Op::Grl(a, lambda), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of `loss` for each parameter in `vars`.
    pub fn backward(&self, loss: Var, vars: &ParamVars) -> Result<GradMap> {
        Ok(self.gradients(loss)?.for_params(vars))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let da = g.matmul_t(self.value(b))?;
                    self.accumulate(grads, a, da);
                }
                if self.needs(b) {
                    let db = self.value(a).t_matmul(g)?;
                    self.accumulate(grads, b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, x, g.clone());
                if self.needs(bias) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let db = Tensor::new(self.value(bias).shape().to_vec(), db)?;
                    self.accumulate(grads, bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let da = g.zip_map(self.value(b), |x, y| x * y)?;
                    self.accumulate(grads, a, da);
                }
                if self.needs(b) {
                    let db = g.zip_map(self.value(a), |x, y| x * y)?;
                    self.accumulate(grads, b, db);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            Op::Relu(a) => {
                let da = g.zip_map(self.value(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, a, da);
            }
            Op::Softmax(z) => {
                let s = &node.value;
                let c = s.cols();
                let mut dz = Vec::with_capacity(s.numel());
                for (s_row, g_row) in s.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: f64 = s_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                    dz.extend(s_row.iter().zip(g_row).map(|(si, gi)| si * (gi - dot)));
                }
                self.accumulate(grads, z, Tensor::new(s.shape().to_vec(), dz)?);
            }
            Op::TempScale { x, log_temp } => {
                let theta = self.value(log_temp).item()?;
                let inv_t = (-theta).exp();
                if self.needs(x) {
                    self.accumulate(grads, x, g.map(|v| v * inv_t));
                }
                if self.needs(log_temp) {
                    // d(x·e^{−θ})/dθ = −y
                    let d: f64 = g.data().iter().zip(node.value.data()).map(|(a, y)| a * y).sum();
                    let dt = Tensor::new(self.value(log_temp).shape().to_vec(), vec![-d])?;
                    self.accumulate(grads, log_temp, dt);
                }
            }
            Op::Log(a) => {
                let da = g.zip_map(self.value(a), |gv, x| if x > LOG_CLAMP { gv / x } else { 0.0 })?;
                self.accumulate(grads, a, da);
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                self.accumulate(grads, a, Tensor::full(self.value(a).shape(), gv));
            }
            Op::SumSquares(a) => {
                let gv = g.item()?;
                self.accumulate(grads, a, self.value(a).map(|x| 2.0 * gv * x));
            }
            Op::Grl(a, lambda) => self.accumulate(grads, a, g.map(|v| -lambda * v)),
        }
        Ok(())
    }
}
