//! Pretraining baselines: plain source-only training and the adversarial
//! (gradient-reversal) variant. Their classifier becomes the starting point
//! of both FixBi models.

use crate::autodiff::{Graph, ParamVars, Var};
use crate::config::TrainConfig;
use crate::data::{paired_minibatches, Dataset};
use crate::error::{Error, Result};
use crate::fixbi::weighted_nll;
use crate::models::{accuracy, Arch, ClassifierModel, DomainDiscriminator};
use crate::optim::{lr_schedule, sgd_step, SgdConfig};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineEpoch {
    pub epoch: usize,
    pub class_loss: f64,
    pub domain_loss: f64,
    pub source_acc: f64,
    pub target_acc: f64,
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub model: ClassifierModel,
    pub discriminator: Option<DomainDiscriminator>,
    pub source_acc: f64,
    /// NaN when the target carries no ground truth.
    pub target_acc: f64,
    pub history: Vec<BaselineEpoch>,
}

fn arch_for(cfg: &TrainConfig, source: &Dataset) -> Arch {
    Arch {
        input_dim: source.dim(),
        widths: cfg.widths.clone(),
        num_classes: source.num_classes(),
    }
}

fn evaluate(model: &ClassifierModel, source: &Dataset, target: &Dataset) -> Result<(f64, f64)> {
    let src_truth = source
        .eval_labels()
        .ok_or_else(|| Error::invalid("source dataset must be labeled"))?;
    let src = accuracy(&model.predict(source.features())?, &src_truth);
    let tgt = match target.eval_labels() {
        Some(truth) => accuracy(&model.predict(target.features())?, &truth),
        None => f64::NAN,
    };
    Ok((src, tgt))
}

/// Minimizes source cross-entropy only.
pub fn train_source_only(cfg: &TrainConfig, source: &Dataset, target_eval: &Dataset) -> Result<BaselineResult> {
    train(cfg, source, target_eval, None)
}

/// Source cross-entropy plus domain classification through gradient
/// reversal (source = 0, target = 1), in one simultaneous step.
pub fn train_dann(cfg: &TrainConfig, source: &Dataset, target: &Dataset) -> Result<BaselineResult> {
    train(cfg, source, target, Some(cfg.grl_lambda))
}

fn train(cfg: &TrainConfig, source: &Dataset, target: &Dataset, grl: Option<f64>) -> Result<BaselineResult> {
    if source.num_classes() != target.num_classes() {
        return Err(Error::Consistency("source and target class counts differ".into()));
    }
    let mut model = ClassifierModel::init(arch_for(cfg, source), cfg.seed)?;
    let mut disc = match grl {
        Some(lambda) => Some(DomainDiscriminator::init(
            *cfg.widths.last().expect("validated non-empty"),
            cfg.discriminator_hidden,
            lambda,
            cfg.seed,
        )?),
        None => None,
    };
    let batch_seed = rng::derive_seed(cfg.seed, "baseline-batches");
    let per_epoch = source.len().max(target.len()) / cfg.batch_size;
    let total_iters = (per_epoch * cfg.baseline_epochs).max(1);
    let lr0 = cfg.baseline_lr();
    let mut history = Vec::with_capacity(cfg.baseline_epochs);
    let mut iteration = 0usize;

    for epoch in 1..=cfg.baseline_epochs {
        let batches = paired_minibatches(source, target, cfg.batch_size, epoch as u64, batch_seed)?;
        let (mut cls_sum, mut dom_sum) = (0.0, 0.0);
        for batch in &batches {
            let sgd = SgdConfig {
                lr: lr_schedule(lr0, iteration as f64 / total_iters as f64)?,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            };
            let mut g = Graph::new();
            let vars = g.bind(model.params());
            let disc_vars = disc.as_ref().map(|d| g.bind(d.params()));
            let obj = adversarial_objective(
                &mut g,
                &model,
                &vars,
                disc.as_ref().zip(disc_vars.as_ref()),
                &batch.xs,
                &batch.ys,
                &batch.xt,
            )?;
            let cls_v = g.scalar_value(obj.class)?;
            if !cls_v.is_finite() {
                return Err(Error::NonFinite {
                    term: "class".into(),
                    iteration,
                });
            }
            cls_sum += cls_v;
            if let Some(dom) = obj.domain {
                let dom_v = g.scalar_value(dom)?;
                if !dom_v.is_finite() {
                    return Err(Error::NonFinite {
                        term: "domain".into(),
                        iteration,
                    });
                }
                dom_sum += dom_v;
            }
            let total = obj.total;

            let grads = g.gradients(total)?;
            sgd_step(model.params_mut(), &grads.for_params(&vars), sgd)?;
            if let (Some(d), Some(dv)) = (disc.as_mut(), disc_vars.as_ref()) {
                sgd_step(d.params_mut(), &grads.for_params(dv), sgd)?;
            }
            iteration += 1;
        }
        let n = batches.len().max(1) as f64;
        let (source_acc, target_acc) = evaluate(&model, source, target)?;
        history.push(BaselineEpoch {
            epoch,
            class_loss: cls_sum / n,
            domain_loss: dom_sum / n,
            source_acc,
            target_acc,
        });
    }

    let (source_acc, target_acc) = evaluate(&model, source, target)?;
    Ok(BaselineResult {
        model,
        discriminator: disc,
        source_acc,
        target_acc,
        history,
    })
}

/// Loss terms of one baseline iteration.
#[derive(Clone, Copy, Debug)]
pub struct AdversarialObjective {
    pub class: Var,
    /// Mean of the source and target domain cross-entropies.
    pub domain: Option<Var>,
    pub total: Var,
}

/// Source cross-entropy, plus the domain loss through gradient reversal
/// when a discriminator is given. Source features are labeled domain 0,
/// target features domain 1.
pub fn adversarial_objective(
    g: &mut Graph,
    model: &ClassifierModel,
    vars: &ParamVars,
    disc: Option<(&DomainDiscriminator, &ParamVars)>,
    xs: &Tensor,
    ys: &[usize],
    xt: &Tensor,
) -> Result<AdversarialObjective> {
    let x = g.constant(xs.clone());
    let out_s = model.forward_graph(g, vars, x)?;
    let probs = g.softmax(out_s.logits)?;
    let class = weighted_nll(g, probs, &Tensor::one_hot(ys, model.num_classes())?)?;
    let Some((d, dv)) = disc else {
        return Ok(AdversarialObjective {
            class,
            domain: None,
            total: class,
        });
    };
    let x = g.constant(xt.clone());
    let out_t = model.forward_graph(g, vars, x)?;
    let dom_s = d.forward_graph(g, dv, out_s.features)?;
    let dom_t = d.forward_graph(g, dv, out_t.features)?;
    let ps = g.softmax(dom_s)?;
    let pt = g.softmax(dom_t)?;
    let ls = weighted_nll(g, ps, &Tensor::one_hot(&vec![0; xs.rows()], 2)?)?;
    let lt = weighted_nll(g, pt, &Tensor::one_hot(&vec![1; xt.rows()], 2)?)?;
    let both = g.add(ls, lt)?;
    let domain = g.scale(both, 0.5);
    let total = g.add(class, domain)?;
    Ok(AdversarialObjective {
        class,
        domain: Some(domain),
        total,
    })
}

/// Domain accuracy of `disc` on fixed features (source = 0, target = 1).
pub fn domain_accuracy(disc: &DomainDiscriminator, source_features: &Tensor, target_features: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let vars = g.bind_frozen(disc.params());
    let mut hits = 0;
    let mut n = 0;
    for (feats, label) in [(source_features, 0usize), (target_features, 1)] {
        let f = g.constant(feats.clone());
        let logits = disc.forward_graph(&mut g, &vars, f)?;
        let v = g.value(logits);
        for i in 0..v.rows() {
            if crate::tensor::argmax(v.row(i)) == label {
                hits += 1;
            }
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { hits as f64 / n as f64 })
}
