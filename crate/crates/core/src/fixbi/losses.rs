//! The four training objectives, written as non-negative quantities to be
//! minimized. Each loss averages over the full batch size `B`, so samples
//! excluded by a confidence gate contribute zero rather than shrinking the
//! denominator.

use crate::autodiff::{Graph, ParamVars, Var};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, LOG_TEMPERATURE};
use crate::tensor::{argmax, Tensor};

use super::mixup::MixupBatch;

/// `−(1/B) Σ_i Σ_c W[i,c]·log p[i,c]` for constant weights `W`.
pub fn weighted_nll(g: &mut Graph, probs: Var, weights: &Tensor) -> Result<Var> {
    let b = g.value(probs).rows();
    if b == 0 {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let w = g.constant(weights.clone());
    let logp = g.log(probs);
    let prod = g.mul(w, logp)?;
    let total = g.sum(prod);
    Ok(g.scale(total, -1.0 / b as f64))
}

/// Per-sample target class and whether the sample passes its gate.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedTargets {
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub num_classes: usize,
}

impl GatedTargets {
    /// Positive pseudo-labels: the argmax of rows whose max probability is strictly above `tau`.
    pub fn positive(probs: &Tensor, tau: f64) -> Self {
        Self::gated(probs, |conf| conf > tau)
    }

    /// Negative pseudo-labels: the argmax of rows whose max probability is strictly below `tau`.
    pub fn negative(probs: &Tensor, tau: f64) -> Self {
        Self::gated(probs, |conf| conf < tau)
    }

    fn gated(probs: &Tensor, keep: impl Fn(f64) -> bool) -> Self {
        let mut labels = Vec::with_capacity(probs.rows());
        let mut mask = Vec::with_capacity(probs.rows());
        for i in 0..probs.rows() {
            let row = probs.row(i);
            let y = argmax(row);
            labels.push(y);
            mask.push(keep(row[y]));
        }
        GatedTargets {
            labels,
            mask,
            num_classes: probs.cols(),
        }
    }

    pub fn num_active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// One-hot rows for gated samples, zero rows elsewhere.
    pub fn weights(&self) -> Tensor {
        let c = self.num_classes;
        let mut w = Tensor::zeros(&[self.labels.len(), c]);
        for (i, (&y, &m)) in self.labels.iter().zip(&self.mask).enumerate() {
            if m {
                w.data_mut()[i * c + y] = 1.0;
            }
        }
        w
    }
}

/// Argmax labels and top-1 confidences of each row.
pub fn pseudo_labels_from_probs(probs: &Tensor) -> (Vec<usize>, Vec<f64>) {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let y = argmax(row);
            (y, row[y])
        })
        .unzip()
}

/// Pseudo-labels of `model` on the target batch `xt`.
pub fn pseudo_labels(model: &ClassifierModel, xt: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
    Ok(pseudo_labels_from_probs(&model.predict_proba(xt)?))
}

/// Mixup cross-entropy on already-computed mixed-input probabilities.
pub fn fm_from_probs(g: &mut Graph, probs: Var, y_mix: &Tensor) -> Result<Var> {
    weighted_nll(g, probs, y_mix)
}

/// Bidirectional matching for the student's target probabilities.
pub fn bim_from_probs(g: &mut Graph, student_probs: Var, targets: &GatedTargets) -> Result<Var> {
    weighted_nll(g, student_probs, &targets.weights())
}

/// Self-penalization: `−(1/B) Σ_i 1[gated]·log(1 − p_T(ŷ_i))` where
/// `p_T` is the softmax of `logits / exp(θ)`.
pub fn sp_from_logits(g: &mut Graph, logits: Var, log_temp: Var, targets: &GatedTargets) -> Result<Var> {
    let scaled = g.temp_scale(logits, log_temp)?;
    let p_t = g.softmax(scaled)?;
    let rest = g.one_minus(p_t);
    weighted_nll(g, rest, &targets.weights())
}

/// `(1/B) Σ_i ‖p_i − q_i‖²`.
pub fn cr_from_probs(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    let b = g.value(p).rows();
    if b == 0 {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let diff = g.sub(p, q)?;
    let sq = g.sum_squares(diff);
    Ok(g.scale(sq, 1.0 / b as f64))
}

fn probs_of(g: &mut Graph, model: &ClassifierModel, vars: &ParamVars, x: &Tensor) -> Result<Var> {
    let xv = g.constant(x.clone());
    let out = model.forward_graph(g, vars, xv)?;
    g.softmax(out.logits)
}

/// Fixed-ratio mixup loss of `model` on `batch`.
pub fn loss_fm(g: &mut Graph, model: &ClassifierModel, vars: &ParamVars, batch: &MixupBatch) -> Result<Var> {
    let p = probs_of(g, model, vars, &batch.x_mix)?;
    fm_from_probs(g, p, &batch.y_mix)
}

/// Bidirectional matching of `student` toward the teacher's positive pseudo-labels.
pub fn loss_bim(
    g: &mut Graph,
    teacher_probs: &Tensor,
    student: &ClassifierModel,
    vars: &ParamVars,
    xt: &Tensor,
    tau_teacher: f64,
) -> Result<Var> {
    check_tau(tau_teacher)?;
    let targets = GatedTargets::positive(teacher_probs, tau_teacher);
    let q = probs_of(g, student, vars, xt)?;
    bim_from_probs(g, q, &targets)
}

/// Self-penalization of `model` on its own negative pseudo-labels.
///
/// The gate uses unit-temperature confidences (the same ones τ is computed
/// from); the penalized probability uses the learnable temperature.
pub fn loss_sp(g: &mut Graph, model: &ClassifierModel, vars: &ParamVars, xt: &Tensor, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let xv = g.constant(xt.clone());
    let out = model.forward_graph(g, vars, xv)?;
    let p = g.softmax(out.logits)?;
    let targets = GatedTargets::negative(g.value(p), tau);
    let theta = vars.get(LOG_TEMPERATURE)?;
    sp_from_logits(g, out.logits, theta, &targets)
}

/// Consistency between the two models on the half/half mixture `x_cr`.
pub fn loss_cr(
    g: &mut Graph,
    sdm: &ClassifierModel,
    sd_vars: &ParamVars,
    tdm: &ClassifierModel,
    td_vars: &ParamVars,
    x_cr: &Tensor,
) -> Result<Var> {
    let p = probs_of(g, sdm, sd_vars, x_cr)?;
    let q = probs_of(g, tdm, td_vars, x_cr)?;
    cr_from_probs(g, p, q)
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold must lie in [0, 1], got {tau}")))
    }
}

/// Per-model loss values of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub fm: f64,
    pub bim: f64,
    pub sp: f64,
    pub cr: f64,
    pub total: f64,
}
