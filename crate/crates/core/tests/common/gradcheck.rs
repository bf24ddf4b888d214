//! Central finite differences against the reverse-mode gradients.

use fixbi::autodiff::{Graph, ParamVars, Var};
use fixbi::baseline::adversarial_objective;
use fixbi::fixbi::{
    adaptive_threshold, bim_from_probs, cr_from_probs, fm_from_probs, mixup, pseudo_labels_from_probs, sp_from_logits,
    GatedTargets,
};
use fixbi::models::{ClassifierModel, DomainDiscriminator, LOG_TEMPERATURE};
use fixbi::optim::ParamSet;
use fixbi::rng::{self, Rng};
use fixbi::Tensor;
use rand::Rng as _;

use super::{random_labels, random_model, random_probs, random_tensor};

pub const EPS: f64 = 1e-5;
/// Denominator floor so that vanishing gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;
/// Trials whose ReLU inputs come closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Builder<'a> = dyn Fn(&mut Graph, &[ParamVars]) -> Var + 'a;
type PartsBuilder<'a> = dyn Fn(&mut Graph, &[ParamVars]) -> (Var, Vec<Var>) + 'a;

/// Agreement between reverse-mode and finite-difference gradients.
#[derive(Clone, Copy, Debug, Default)]
pub struct Agreement {
    /// Largest per-component relative error.
    pub max_component: f64,
    /// `|a - n| / max(|a|, |n|)` over the whole flattened gradient.
    pub vector: f64,
}

impl Agreement {
    pub fn merge(self, o: Agreement) -> Agreement {
        Agreement {
            max_component: self.max_component.max(o.max_component),
            vector: self.vector.max(o.vector),
        }
    }
}

/// Gradient check of a single loss; `None` when the loss sits too close
/// to a ReLU kink to be checked.
pub fn check(params: &[ParamSet], build: &Builder) -> Option<Agreement> {
    let weights = vec![vec![1.0]; params.len()];
    check_parts(
        params,
        &|g, v| {
            let l = build(g, v);
            (l, vec![l])
        },
        &weights,
    )
}

/// The backward root may differ from a plain sum of its parts (gradient
/// reversal does this on purpose). The expected gradient for parameter set
/// `k` is `sum_i weights[k][i] * d(part_i)/d(params_k)`, each term by
/// central differences.
pub fn check_parts(params: &[ParamSet], build: &PartsBuilder, weights: &[Vec<f64>]) -> Option<Agreement> {
    let mut g = Graph::new();
    let vars: Vec<ParamVars> = params.iter().map(|p| g.bind(p)).collect();
    let (root, _) = build(&mut g, &vars);
    if g.relu_margin() < KINK_MARGIN {
        return None;
    }
    let grads = g.gradients(root).unwrap();

    let eval = |k: usize, flat: &[f64]| -> Vec<f64> {
        let mut ps = params.to_vec();
        ps[k].set_flat(flat).unwrap();
        let mut g = Graph::new();
        let vars: Vec<ParamVars> = ps.iter().map(|p| g.bind(p)).collect();
        let (_, parts) = build(&mut g, &vars);
        parts.iter().map(|&l| g.scalar_value(l).unwrap()).collect()
    };

    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, p) in params.iter().enumerate() {
        let analytic = grads.for_params(&vars[k]).flatten_like(p).unwrap();
        let base = p.flatten();
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += EPS;
            let mut minus = base.clone();
            minus[j] -= EPS;
            let (fp, fm) = (eval(k, &plus), eval(k, &minus));
            let numeric: f64 = weights[k]
                .iter()
                .zip(fp.iter().zip(&fm))
                .map(|(w, (a, b))| w * (a - b) / (2.0 * EPS))
                .sum();
            let e = relative_error(analytic[j], numeric);
            worst = worst.max(e);
            all_a.push(analytic[j]);
            all_n.push(numeric);
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = all_a.iter().zip(&all_n).map(|(a, n)| a - n).collect();
    let scale = norm(&all_a).max(norm(&all_n));
    let vector = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
    Some(Agreement {
        max_component: worst,
        vector,
    })
}

pub struct Shape {
    pub dim: usize,
    pub widths: Vec<usize>,
    pub classes: usize,
    pub batch: usize,
}

pub fn random_shape(rng: &mut Rng) -> Shape {
    let depth = rng.random_range(1..=2);
    Shape {
        dim: rng.random_range(2..=4),
        widths: (0..depth).map(|_| rng.random_range(2..=5)).collect(),
        classes: rng.random_range(2..=4),
        batch: rng.random_range(2..=6),
    }
}

fn model(rng: &mut Rng, s: &Shape) -> ClassifierModel {
    random_model(rng, s.dim, s.widths.clone(), s.classes, 0.8)
}

fn probs(g: &mut Graph, m: &ClassifierModel, v: &ParamVars, x: &Tensor) -> Var {
    let xv = g.constant(x.clone());
    let out = m.forward_graph(g, v, xv).unwrap();
    g.softmax(out.logits).unwrap()
}

/// One randomized trial of the named loss; `None` means redraw.
pub fn trial(loss: &str, rng: &mut Rng) -> Option<Agreement> {
    let s = random_shape(rng);
    let b = s.batch;
    let xs = random_tensor(rng, b, s.dim, 1.5);
    let xt = random_tensor(rng, b, s.dim, 1.5);
    match loss {
        "fm" => {
            let m = model(rng, &s);
            let ys = Tensor::one_hot(&random_labels(rng, b, s.classes), s.classes).unwrap();
            let yt = Tensor::one_hot(&random_labels(rng, b, s.classes), s.classes).unwrap();
            let mix = mixup(&xs, &ys, &xt, &yt, rng.random()).unwrap();
            check(&[m.params().clone()], &|g, v| {
                let p = probs(g, &m, &v[0], &mix.x_mix);
                fm_from_probs(g, p, &mix.y_mix).unwrap()
            })
        }
        "bim" => {
            let m = model(rng, &s);
            let teacher = random_probs(rng, b, s.classes);
            let (_, conf) = pseudo_labels_from_probs(&teacher);
            let mut tau = adaptive_threshold(&conf).unwrap().tau;
            if rng.random::<bool>() || GatedTargets::positive(&teacher, tau).num_active() == 0 {
                tau = 0.0;
            }
            let targets = GatedTargets::positive(&teacher, tau);
            check(&[m.params().clone()], &|g, v| {
                let p = probs(g, &m, &v[0], &xt);
                bim_from_probs(g, p, &targets).unwrap()
            })
        }
        "sp" => {
            let m = model(rng, &s);
            let p = m.predict_proba(&xt).unwrap();
            let (_, conf) = pseudo_labels_from_probs(&p);
            let mut tau = adaptive_threshold(&conf).unwrap().tau;
            if rng.random::<bool>() || GatedTargets::negative(&p, tau).num_active() == 0 {
                tau = 1.0;
            }
            let targets = GatedTargets::negative(&p, tau);
            check(&[m.params().clone()], &|g, v| {
                let x = g.constant(xt.clone());
                let out = m.forward_graph(g, &v[0], x).unwrap();
                let theta = v[0].get(LOG_TEMPERATURE).unwrap();
                sp_from_logits(g, out.logits, theta, &targets).unwrap()
            })
        }
        "cr" => {
            let sdm = model(rng, &s);
            let tdm = model(rng, &s);
            let ys = Tensor::one_hot(&random_labels(rng, b, s.classes), s.classes).unwrap();
            let x_cr = mixup(&xs, &ys, &xt, &ys, 0.5).unwrap().x_mix;
            check(&[sdm.params().clone(), tdm.params().clone()], &|g, v| {
                let p = probs(g, &sdm, &v[0], &x_cr);
                let q = probs(g, &tdm, &v[1], &x_cr);
                cr_from_probs(g, p, q).unwrap()
            })
        }
        "dann" => {
            let m = model(rng, &s);
            let hidden = rng.random_range(2..=5);
            let lambda = rng.random_range(0.1..2.0);
            let mut d = DomainDiscriminator::init(*s.widths.last().unwrap(), hidden, lambda, rng.random()).unwrap();
            let n = d.params().num_scalars();
            let flat: Vec<f64> = (0..n).map(|_| 0.8 * (2.0 * rng.random::<f64>() - 1.0)).collect();
            d.params_mut().set_flat(&flat).unwrap();
            let ys = random_labels(rng, b, s.classes);
            // reversal flips the domain term for the classifier only
            check_parts(
                &[m.params().clone(), d.params().clone()],
                &|g, v| {
                    let o = adversarial_objective(g, &m, &v[0], Some((&d, &v[1])), &xs, &ys, &xt).unwrap();
                    (o.total, vec![o.class, o.domain.unwrap()])
                },
                &[vec![1.0, -lambda], vec![1.0, 1.0]],
            )
        }
        "mlp-ce" => {
            // two hidden layers plus the head
            let s = Shape {
                widths: vec![rng.random_range(2..=5), rng.random_range(2..=5)],
                ..s
            };
            let m = model(rng, &s);
            let ys = random_labels(rng, b, s.classes);
            check(&[m.params().clone()], &|g, v| {
                adversarial_objective(g, &m, &v[0], None, &xs, &ys, &xt).unwrap().total
            })
        }
        other => panic!("unknown loss {other}"),
    }
}

pub struct SuiteResult {
    pub loss: &'static str,
    pub trials: usize,
    pub redrawn: usize,
    pub agreement: Agreement,
}

/// Runs `trials` checkable trials of `loss`.
pub fn suite(loss: &'static str, trials: usize, seed: u64) -> SuiteResult {
    let mut rng = rng::stream(seed, loss, 0);
    let mut done = 0;
    let mut redrawn = 0;
    let mut worst = Agreement::default();
    while done < trials {
        match trial(loss, &mut rng) {
            Some(a) => {
                worst = worst.merge(a);
                done += 1;
            }
            None => redrawn += 1,
        }
        assert!(redrawn < 10 * trials, "too many kink-adjacent draws for {loss}");
    }
    SuiteResult {
        loss,
        trials: done,
        redrawn,
        agreement: worst,
    }
}
