use std::time::Instant;

use crate::autodiff::Graph;
use crate::config::{LossToggles, PseudoLabelSource, TrainConfig};
use crate::data::{paired_minibatches, Dataset, PairedBatch};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, ThresholdRecord};
use crate::models::{accuracy, ensemble_from_probs, ClassifierModel, DualState, LOG_TEMPERATURE};
use crate::optim::{lr_schedule, sgd_step, SgdConfig};
use crate::rng;
use crate::tensor::Tensor;

use super::losses::{
    bim_from_probs, cr_from_probs, fm_from_probs, pseudo_labels_from_probs, sp_from_logits, GatedTargets, LossBundle,
};
use super::mixup::mixup;
use super::ratio::ratio_rule_sample;
use super::threshold::{adaptive_threshold, ThresholdStats};

/// Everything one dual-model update needs besides the batch.
#[derive(Clone, Debug)]
pub struct StepParams {
    pub lambda_sd: f64,
    pub lambda_td: f64,
    /// Mixing ratio of the consistency inputs.
    pub lambda_cr: f64,
    pub sgd: SgdConfig,
    /// Enables the matching and consistency terms.
    pub post_warmup: bool,
    pub losses: LossToggles,
    /// Per-sample target pseudo-labels for the batch; `None` derives them
    /// from each model's own current predictions.
    pub frozen_labels: Option<Vec<usize>>,
    pub iteration: usize,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub sd: LossBundle,
    pub td: LossBundle,
    pub stats_sd: ThresholdStats,
    pub stats_td: ThresholdStats,
}

fn finite(term: &str, value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            iteration,
        })
    }
}

/// One simultaneous update of both models on `batch`.
///
/// Both models' losses are built on one graph from the weights at the start
/// of the iteration. Teacher predictions in the matching terms are
/// constants; the consistency term differentiates into both models.
pub fn fixbi_step(state: &mut DualState, batch: &PairedBatch, p: &StepParams) -> Result<StepOutcome> {
    let c = state.sdm.num_classes();
    if state.tdm.num_classes() != c {
        return Err(Error::Consistency("models disagree on class count".into()));
    }
    let it = p.iteration;
    let mut g = Graph::new();
    let sd_vars = g.bind(state.sdm.params());
    let td_vars = g.bind(state.tdm.params());

    let xt = g.constant(batch.xt.clone());
    let out_sd = state.sdm.forward_graph(&mut g, &sd_vars, xt)?;
    let out_td = state.tdm.forward_graph(&mut g, &td_vars, xt)?;
    let p_sd = g.softmax(out_sd.logits)?;
    let p_td = g.softmax(out_td.logits)?;
    let probs_sd = g.value(p_sd).clone();
    let probs_td = g.value(p_td).clone();
    let (labels_sd, conf_sd) = pseudo_labels_from_probs(&probs_sd);
    let (labels_td, conf_td) = pseudo_labels_from_probs(&probs_td);
    let stats_sd = adaptive_threshold(&conf_sd)?;
    let stats_td = adaptive_threshold(&conf_td)?;

    let ys = Tensor::one_hot(&batch.ys, c)?;
    let (pl_sd, pl_td) = match &p.frozen_labels {
        Some(l) => (Tensor::one_hot(l, c)?, Tensor::one_hot(l, c)?),
        None => (Tensor::one_hot(&labels_sd, c)?, Tensor::one_hot(&labels_td, c)?),
    };

    let mut sd = LossBundle::default();
    let mut td = LossBundle::default();
    let mut terms = Vec::new();

    if p.losses.fm {
        let mix_sd = mixup(&batch.xs, &ys, &batch.xt, &pl_sd, p.lambda_sd)?;
        let mix_td = mixup(&batch.xs, &ys, &batch.xt, &pl_td, p.lambda_td)?;
        let x_sd = g.constant(mix_sd.x_mix);
        let o = state.sdm.forward_graph(&mut g, &sd_vars, x_sd)?;
        let prob = g.softmax(o.logits)?;
        let l = fm_from_probs(&mut g, prob, &mix_sd.y_mix)?;
        sd.fm = finite("fm_sd", g.scalar_value(l)?, it)?;
        terms.push(l);
        let x_td = g.constant(mix_td.x_mix);
        let o = state.tdm.forward_graph(&mut g, &td_vars, x_td)?;
        let prob = g.softmax(o.logits)?;
        let l = fm_from_probs(&mut g, prob, &mix_td.y_mix)?;
        td.fm = finite("fm_td", g.scalar_value(l)?, it)?;
        terms.push(l);
    }

    if p.losses.sp {
        let neg_sd = GatedTargets::negative(&probs_sd, stats_sd.tau);
        let theta = sd_vars.get(LOG_TEMPERATURE)?;
        let l = sp_from_logits(&mut g, out_sd.logits, theta, &neg_sd)?;
        sd.sp = finite("sp_sd", g.scalar_value(l)?, it)?;
        terms.push(l);
        let neg_td = GatedTargets::negative(&probs_td, stats_td.tau);
        let theta = td_vars.get(LOG_TEMPERATURE)?;
        let l = sp_from_logits(&mut g, out_td.logits, theta, &neg_td)?;
        td.sp = finite("sp_td", g.scalar_value(l)?, it)?;
        terms.push(l);
    }

    if p.post_warmup && p.losses.bim {
        // the TDM teaches the SDM where the TDM is confident, and vice versa
        let pos_td = GatedTargets::positive(&probs_td, stats_td.tau);
        if pos_td.num_active() > 0 {
            let l = bim_from_probs(&mut g, p_sd, &pos_td)?;
            sd.bim = finite("bim_sd", g.scalar_value(l)?, it)?;
            terms.push(l);
        }
        let pos_sd = GatedTargets::positive(&probs_sd, stats_sd.tau);
        if pos_sd.num_active() > 0 {
            let l = bim_from_probs(&mut g, p_td, &pos_sd)?;
            td.bim = finite("bim_td", g.scalar_value(l)?, it)?;
            terms.push(l);
        }
    }

    if p.post_warmup && p.losses.cr {
        // labels are irrelevant here; only the mixed inputs are used
        let cr_mix = mixup(&batch.xs, &ys, &batch.xt, &pl_sd, p.lambda_cr)?;
        let x_cr = g.constant(cr_mix.x_mix);
        let o_sd = state.sdm.forward_graph(&mut g, &sd_vars, x_cr)?;
        let o_td = state.tdm.forward_graph(&mut g, &td_vars, x_cr)?;
        let q_sd = g.softmax(o_sd.logits)?;
        let q_td = g.softmax(o_td.logits)?;
        let l = cr_from_probs(&mut g, q_sd, q_td)?;
        let v = finite("cr", g.scalar_value(l)?, it)?;
        sd.cr = v;
        td.cr = v;
        terms.push(l);
    }

    sd.total = sd.fm + sd.sp + sd.bim + sd.cr;
    td.total = td.fm + td.sp + td.bim + td.cr;

    if let Some((&first, rest)) = terms.split_first() {
        let mut total = first;
        for &t in rest {
            total = g.add(total, t)?;
        }
        let grads = g.gradients(total)?;
        let g_sd = grads.for_params(&sd_vars);
        let g_td = grads.for_params(&td_vars);
        sgd_step(state.sdm.params_mut(), &g_sd, p.sgd)?;
        sgd_step(state.tdm.params_mut(), &g_td, p.sgd)?;
    }

    Ok(StepOutcome {
        sd,
        td,
        stats_sd,
        stats_td,
    })
}

/// Final dual state plus per-epoch metrics and per-iteration thresholds.
#[derive(Clone, Debug)]
pub struct FixbiRun {
    pub state: DualState,
    pub metrics: Vec<MetricsRow>,
    pub thresholds: Vec<ThresholdRecord>,
}

pub fn train_fixbi(cfg: &TrainConfig, source: &Dataset, target: &Dataset, init: &ClassifierModel) -> Result<FixbiRun> {
    train_fixbi_with(cfg, source, target, init, &mut |_| {})
}

struct EvalView<'a> {
    source: &'a Dataset,
    source_truth: Vec<usize>,
    target: &'a Dataset,
    target_truth: Option<Vec<usize>>,
}

impl EvalView<'_> {
    fn fill(&self, state: &DualState, row: &mut MetricsRow) -> Result<()> {
        let src_sd = state.sdm.predict(self.source.features())?;
        let src_td = state.tdm.predict(self.source.features())?;
        row.acc_src_sd = accuracy(&src_sd, &self.source_truth);
        row.acc_src_td = accuracy(&src_td, &self.source_truth);
        match &self.target_truth {
            Some(truth) => {
                let p = state.sdm.predict_proba(self.target.features())?;
                let q = state.tdm.predict_proba(self.target.features())?;
                let (sd, _) = pseudo_labels_from_probs(&p);
                let (td, _) = pseudo_labels_from_probs(&q);
                row.acc_tgt_sd = accuracy(&sd, truth);
                row.acc_tgt_td = accuracy(&td, truth);
                row.acc_tgt_ens = accuracy(&ensemble_from_probs(&p, &q)?, truth);
            }
            None => {
                row.acc_tgt_sd = f64::NAN;
                row.acc_tgt_td = f64::NAN;
                row.acc_tgt_ens = f64::NAN;
            }
        }
        Ok(())
    }
}

/// Dual-model training from pretrained `init`; `on_epoch` sees each row as
/// soon as it is complete, so rows survive a later failure.
pub fn train_fixbi_with(
    cfg: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    init: &ClassifierModel,
    on_epoch: &mut dyn FnMut(&MetricsRow),
) -> Result<FixbiRun> {
    cfg.validate()?;
    if source.num_classes() != init.num_classes() || target.num_classes() != init.num_classes() {
        return Err(Error::Consistency("datasets and model disagree on class count".into()));
    }
    let source_truth = source
        .eval_labels()
        .ok_or_else(|| Error::invalid("source dataset must be labeled"))?;
    let eval = EvalView {
        source,
        source_truth,
        target,
        target_truth: target.eval_labels(),
    };

    let frozen = match cfg.pseudo_label_source {
        PseudoLabelSource::FrozenBaseline => Some(init.predict(target.features())?),
        PseudoLabelSource::Live => None,
    };

    let mut state = DualState::from_pretrained(init);
    let batch_seed = rng::derive_seed(cfg.seed, "fixbi-batches");
    let mut ratio_rng = rng::stream(cfg.seed, "fixbi-ratios", 0);
    let per_epoch = source.len().max(target.len()) / cfg.batch_size;
    let total_iters = (per_epoch * cfg.epochs).max(1);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut thresholds = Vec::new();
    let mut iteration = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = paired_minibatches(source, target, cfg.batch_size, epoch as u64, batch_seed)?;
        let post_warmup = epoch > cfg.warmup_epochs;
        let mut row = MetricsRow {
            epoch,
            ..Default::default()
        };

        for batch in &batches {
            let lr = lr_schedule(cfg.lr, iteration as f64 / total_iters as f64)?;
            let (lambda_sd, lambda_td) = ratio_rule_sample(
                cfg.ratio_rule,
                cfg.alpha,
                (cfg.lambda_sd, cfg.lambda_td),
                &mut ratio_rng,
            )?;
            let params = StepParams {
                lambda_sd,
                lambda_td,
                lambda_cr: cfg.lambda_cr,
                sgd: SgdConfig {
                    lr,
                    momentum: cfg.momentum,
                    weight_decay: cfg.weight_decay,
                },
                post_warmup,
                losses: cfg.losses,
                frozen_labels: frozen
                    .as_ref()
                    .map(|f| batch.target_idx.iter().map(|&i| f[i]).collect()),
                iteration,
            };
            let out = fixbi_step(&mut state, batch, &params)?;

            row.fm_sd += out.sd.fm;
            row.fm_td += out.td.fm;
            row.bim_sd += out.sd.bim;
            row.bim_td += out.td.bim;
            row.sp_sd += out.sd.sp;
            row.sp_td += out.td.sp;
            row.cr += out.sd.cr;
            row.tau_sd += out.stats_sd.tau;
            row.tau_td += out.stats_td.tau;
            row.n_above_sd += out.stats_sd.num_above;
            row.n_above_td += out.stats_td.num_above;
            thresholds.push(ThresholdRecord {
                iteration,
                epoch,
                post_warmup,
                tau_sd: out.stats_sd.tau,
                tau_td: out.stats_td.tau,
                n_above_sd: out.stats_sd.num_above,
                n_above_td: out.stats_td.num_above,
                n_below_sd: out.stats_sd.num_below,
                n_below_td: out.stats_td.num_below,
            });
            iteration += 1;
        }

        let n = batches.len().max(1) as f64;
        for v in [
            &mut row.fm_sd,
            &mut row.fm_td,
            &mut row.bim_sd,
            &mut row.bim_td,
            &mut row.sp_sd,
            &mut row.sp_td,
            &mut row.cr,
            &mut row.tau_sd,
            &mut row.tau_td,
        ] {
            *v /= n;
        }
        state.epoch = epoch;
        eval.fill(&state, &mut row)?;
        if cfg.log_wall_time {
            row.wall_ms = started.elapsed().as_millis() as u64;
        }
        on_epoch(&row);
        metrics.push(row);
    }

    Ok(FixbiRun {
        state,
        metrics,
        thresholds,
    })
}
