//! Named parameters, gradients, SGD with momentum and the annealed
//! learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub momentum: Tensor,
}

/// Parameters keyed by unique name, each with a momentum buffer of the same shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter with a zeroed momentum buffer. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Consistency(format!("duplicate parameter `{name}`")));
        }
        let momentum = Tensor::zeros(value.shape());
        self.entries.insert(name, Param { value, momentum });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn reset_momentum(&mut self) {
        for p in self.entries.values_mut() {
            p.momentum = Tensor::zeros(p.value.shape());
        }
    }

    /// Flattened view of all parameter values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape(format!(
                "expected {} values, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.entries.values_mut() {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap {
    entries: BTreeMap<String, Tensor>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flattened gradients in the same order as [`ParamSet::flatten`].
    pub fn flatten_like(&self, params: &ParamSet) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(params.num_scalars());
        for name in params.names() {
            let g = self
                .get(name)
                .ok_or_else(|| Error::Consistency(format!("missing gradient for `{name}`")))?;
            out.extend_from_slice(g.data());
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One SGD step with coupled weight decay:
/// `v ← momentum·v + (g + weight_decay·w)`, `w ← w − lr·v`.
///
/// Every parameter needs a gradient of matching shape; nothing is updated
/// unless all of them check out.
pub fn sgd_step(params: &mut ParamSet, grads: &GradMap, cfg: SgdConfig) -> Result<()> {
    cfg.validate()?;
    for (name, p) in &params.entries {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Consistency(format!("missing gradient for `{name}`")))?;
        if g.shape() != p.value.shape() {
            return Err(Error::Consistency(format!(
                "gradient for `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
    }
    for (name, p) in params.entries.iter_mut() {
        let g = &grads.entries[name];
        let w = p.value.data_mut();
        let v = p.momentum.data_mut();
        for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *wi);
            *wi -= cfg.lr * *vi;
        }
    }
    Ok(())
}

const SCHEDULE_ALPHA: f64 = 10.0;
const SCHEDULE_BETA: f64 = 0.75;

/// Annealed rate `lr0 / (1 + 10·p)^0.75` for training progress `p ∈ [0, 1]`.
pub fn lr_schedule(lr0: f64, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::invalid(format!("progress must lie in [0, 1], got {progress}")));
    }
    Ok(lr0 / (1.0 + SCHEDULE_ALPHA * progress).powf(SCHEDULE_BETA))
}
