//! Scalar-loop reimplementation of one dual-model iteration, written
//! independently of the graph engine: forward pass, gates, the four losses,
//! hand-derived backpropagation and momentum SGD.

use fixbi::models::{ClassifierModel, LOG_TEMPERATURE};

#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub theta: f64,
}

fn rows(t: &fixbi::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

impl Mlp {
    /// Reads a one-hidden-layer classifier.
    pub fn from_model(m: &ClassifierModel) -> Self {
        let p = m.params();
        assert_eq!(m.arch().widths.len(), 1, "oracle handles one hidden layer");
        Mlp {
            w1: rows(p.get("extractor.0.weight").unwrap()),
            b1: p.get("extractor.0.bias").unwrap().data().to_vec(),
            w2: rows(p.get("head.weight").unwrap()),
            b2: p.get("head.bias").unwrap().data().to_vec(),
            theta: p.get(LOG_TEMPERATURE).unwrap().data()[0],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            w1: self.w1.iter().map(|r| vec![0.0; r.len()]).collect(),
            b1: vec![0.0; self.b1.len()],
            w2: self.w2.iter().map(|r| vec![0.0; r.len()]).collect(),
            b2: vec![0.0; self.b2.len()],
            theta: 0.0,
        }
    }

    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (i, r) in self.w1.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                out.push((format!("w1[{i}][{j}]"), *v));
            }
        }
        for (j, v) in self.b1.iter().enumerate() {
            out.push((format!("b1[{j}]"), *v));
        }
        for (i, r) in self.w2.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                out.push((format!("w2[{i}][{j}]"), *v));
            }
        }
        for (j, v) in self.b2.iter().enumerate() {
            out.push((format!("b2[{j}]"), *v));
        }
        out.push(("theta".into(), self.theta));
        out
    }

    /// (pre-activation, hidden activation, logits)
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.b1.len();
        let mut z1 = self.b1.clone();
        for (i, xi) in x.iter().enumerate() {
            for j in 0..h {
                z1[j] += xi * self.w1[i][j];
            }
        }
        let a1: Vec<f64> = z1.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let mut logits = self.b2.clone();
        for (i, ai) in a1.iter().enumerate() {
            for (c, l) in logits.iter_mut().enumerate() {
                *l += ai * self.w2[i][c];
            }
        }
        (z1, a1, logits)
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.forward(x).2)
    }

    /// Accumulates d(loss)/d(params) given d(loss)/d(logits) for input `x`.
    fn backprop(&self, x: &[f64], g_logits: &[f64], grad: &mut Mlp) {
        let (z1, a1, _) = self.forward(x);
        for (i, ai) in a1.iter().enumerate() {
            for (c, gl) in g_logits.iter().enumerate() {
                grad.w2[i][c] += ai * gl;
            }
        }
        for (c, gl) in g_logits.iter().enumerate() {
            grad.b2[c] += gl;
        }
        for j in 0..z1.len() {
            if z1[j] <= 0.0 {
                continue;
            }
            let da: f64 = g_logits.iter().enumerate().map(|(c, gl)| gl * self.w2[j][c]).sum();
            for (i, xi) in x.iter().enumerate() {
                grad.w1[i][j] += xi * da;
            }
            grad.b1[j] += da;
        }
    }

    fn sgd(&mut self, grad: &Mlp, vel: &mut Mlp, lr: f64, m: f64, wd: f64) {
        let upd = |w: &mut f64, g: f64, v: &mut f64| {
            *v = m * *v + (g + wd * *w);
            *w -= lr * *v;
        };
        for i in 0..self.w1.len() {
            for j in 0..self.w1[i].len() {
                upd(&mut self.w1[i][j], grad.w1[i][j], &mut vel.w1[i][j]);
            }
        }
        for j in 0..self.b1.len() {
            upd(&mut self.b1[j], grad.b1[j], &mut vel.b1[j]);
        }
        for i in 0..self.w2.len() {
            for j in 0..self.w2[i].len() {
                upd(&mut self.w2[i][j], grad.w2[i][j], &mut vel.w2[i][j]);
            }
        }
        for j in 0..self.b2.len() {
            upd(&mut self.b2[j], grad.b2[j], &mut vel.b2[j]);
        }
        upd(&mut self.theta, grad.theta, &mut vel.theta);
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn top1(p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (c, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = c;
        }
    }
    (best, p[best])
}

fn threshold(conf: &[f64]) -> f64 {
    let n = conf.len() as f64;
    let mean = conf.iter().sum::<f64>() / n;
    let var = conf.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    (mean - 2.0 * var.sqrt()).clamp(0.0, 1.0)
}

fn one_hot(k: usize, c: usize) -> Vec<f64> {
    let mut v = vec![0.0; c];
    v[k] = 1.0;
    v
}

/// d/dz of the softmax composed with upstream gradient `g` on the probabilities.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pj, gj)| pj * (gj - dot)).collect()
}

#[derive(Clone, Debug)]
pub struct Hyper {
    pub lambda_sd: f64,
    pub lambda_td: f64,
    pub lambda_cr: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub post_warmup: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Losses {
    pub fm: f64,
    pub sp: f64,
    pub bim: f64,
    pub cr: f64,
    pub tau: f64,
    pub num_sp: usize,
    pub num_bim: usize,
}

pub struct DualOracle {
    pub sdm: Mlp,
    pub tdm: Mlp,
    pub vel_sd: Mlp,
    pub vel_td: Mlp,
}

impl DualOracle {
    pub fn new(sdm: Mlp, tdm: Mlp) -> Self {
        let vel_sd = sdm.zeros_like();
        let vel_td = tdm.zeros_like();
        DualOracle {
            sdm,
            tdm,
            vel_sd,
            vel_td,
        }
    }

    pub fn step(&mut self, xs: &[Vec<f64>], ys: &[usize], xt: &[Vec<f64>], h: &Hyper) -> (Losses, Losses) {
        let bs = xs.len() as f64;
        let c = self.sdm.b2.len();
        let p_sd: Vec<Vec<f64>> = xt.iter().map(|x| self.sdm.probs(x)).collect();
        let p_td: Vec<Vec<f64>> = xt.iter().map(|x| self.tdm.probs(x)).collect();
        let top_sd: Vec<(usize, f64)> = p_sd.iter().map(|p| top1(p)).collect();
        let top_td: Vec<(usize, f64)> = p_td.iter().map(|p| top1(p)).collect();
        let tau_sd = threshold(&top_sd.iter().map(|t| t.1).collect::<Vec<_>>());
        let tau_td = threshold(&top_td.iter().map(|t| t.1).collect::<Vec<_>>());

        let mut grad_sd = self.sdm.zeros_like();
        let mut grad_td = self.tdm.zeros_like();
        let mut l_sd = Losses {
            tau: tau_sd,
            ..Default::default()
        };
        let mut l_td = Losses {
            tau: tau_td,
            ..Default::default()
        };

        for (model, grad, loss, lambda, own, tau, peer, peer_tau) in [
            (
                &self.sdm,
                &mut grad_sd,
                &mut l_sd,
                h.lambda_sd,
                &top_sd,
                tau_sd,
                &top_td,
                tau_td,
            ),
            (
                &self.tdm,
                &mut grad_td,
                &mut l_td,
                h.lambda_td,
                &top_td,
                tau_td,
                &top_sd,
                tau_sd,
            ),
        ] {
            for i in 0..xs.len() {
                // mixup on inputs and labels
                let x: Vec<f64> = xs[i]
                    .iter()
                    .zip(&xt[i])
                    .map(|(a, t)| lambda * a + (1.0 - lambda) * t)
                    .collect();
                let ys1 = one_hot(ys[i], c);
                let yt1 = one_hot(own[i].0, c);
                let y: Vec<f64> = ys1
                    .iter()
                    .zip(&yt1)
                    .map(|(a, t)| lambda * a + (1.0 - lambda) * t)
                    .collect();
                let p = model.probs(&x);
                loss.fm -= y.iter().zip(&p).map(|(yc, pc)| yc * pc.ln()).sum::<f64>() / bs;
                let ysum: f64 = y.iter().sum();
                let g: Vec<f64> = p.iter().zip(&y).map(|(pc, yc)| (pc * ysum - yc) / bs).collect();
                model.backprop(&x, &g, grad);

                // self-penalization on own unconfident predictions
                if own[i].1 < tau {
                    loss.num_sp += 1;
                    let (_, _, z) = model.forward(&xt[i]);
                    let t = model.theta.exp();
                    let u: Vec<f64> = z.iter().map(|v| v / t).collect();
                    let q = softmax(&u);
                    let k = own[i].0;
                    loss.sp -= (1.0 - q[k]).ln() / bs;
                    let du: Vec<f64> = (0..c)
                        .map(|j| {
                            let d = if j == k { 1.0 } else { 0.0 };
                            q[k] * (d - q[j]) / (1.0 - q[k]) / bs
                        })
                        .collect();
                    let dz: Vec<f64> = du.iter().map(|v| v / t).collect();
                    grad.theta -= du.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
                    model.backprop(&xt[i], &dz, grad);
                }

                // peer-confident pseudo-labels
                if h.post_warmup && peer[i].1 > peer_tau {
                    loss.num_bim += 1;
                    let p = model.probs(&xt[i]);
                    let k = peer[i].0;
                    loss.bim -= p[k].ln() / bs;
                    let g: Vec<f64> = (0..c).map(|j| (p[j] - if j == k { 1.0 } else { 0.0 }) / bs).collect();
                    model.backprop(&xt[i], &g, grad);
                }
            }
        }

        if h.post_warmup {
            for i in 0..xs.len() {
                let x: Vec<f64> = xs[i]
                    .iter()
                    .zip(&xt[i])
                    .map(|(a, t)| h.lambda_cr * a + (1.0 - h.lambda_cr) * t)
                    .collect();
                let p = self.sdm.probs(&x);
                let q = self.tdm.probs(&x);
                let cr: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / bs;
                l_sd.cr += cr;
                l_td.cr += cr;
                let gp: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 2.0 * (a - b) / bs).collect();
                let gq: Vec<f64> = gp.iter().map(|v| -v).collect();
                self.sdm.backprop(&x, &softmax_backward(&p, &gp), &mut grad_sd);
                self.tdm.backprop(&x, &softmax_backward(&q, &gq), &mut grad_td);
            }
        }

        self.sdm
            .sgd(&grad_sd, &mut self.vel_sd, h.lr, h.momentum, h.weight_decay);
        self.tdm
            .sgd(&grad_td, &mut self.vel_td, h.lr, h.momentum, h.weight_decay);
        (l_sd, l_td)
    }
}

pub mod compare {
    use super::{DualOracle, Hyper, Mlp};
    use crate::common::{random_model, random_tensor};
    use fixbi::config::LossToggles;
    use fixbi::data::PairedBatch;
    use fixbi::fixbi::{fixbi_step, StepParams};
    use fixbi::models::DualState;
    use fixbi::optim::SgdConfig;
    use fixbi::rng;
    use rand::Rng as _;

    pub struct Case {
        pub state: DualState,
        pub batch: PairedBatch,
    }

    pub fn case(seed: u64, batch: usize, dim: usize, hidden: usize, classes: usize) -> Case {
        let mut r = rng::stream(seed, "oracle-case", 0);
        let sdm = random_model(&mut r, dim, vec![hidden], classes, 1.0);
        let tdm = random_model(&mut r, dim, vec![hidden], classes, 1.0);
        let xs = random_tensor(&mut r, batch, dim, 1.0);
        let xt = random_tensor(&mut r, batch, dim, 1.0);
        let ys = (0..batch).map(|_| r.random_range(0..classes)).collect();
        Case {
            state: DualState { sdm, tdm, epoch: 0 },
            batch: PairedBatch {
                source_idx: (0..batch).collect(),
                target_idx: (0..batch).collect(),
                xs,
                ys,
                xt,
            },
        }
    }

    fn rows(t: &fixbi::Tensor) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    }

    #[derive(Debug, Default)]
    pub struct Report {
        /// Largest absolute difference over losses, thresholds and parameters.
        pub max_abs_error: f64,
        pub worst: String,
        pub num_sp: usize,
        pub num_bim: usize,
    }

    impl Report {
        fn see(&mut self, what: String, a: f64, b: f64) {
            let e = (a - b).abs();
            if e > self.max_abs_error || e.is_nan() {
                self.max_abs_error = if e.is_nan() { f64::INFINITY } else { e };
                self.worst = format!("{what}: {a} vs {b}");
            }
        }
    }

    /// Runs `steps` iterations through the library and the oracle.
    pub fn run(mut c: Case, steps: usize, post_warmup: bool) -> Report {
        let h = Hyper {
            lambda_sd: 0.7,
            lambda_td: 0.3,
            lambda_cr: 0.5,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.005,
            post_warmup,
        };
        let mut oracle = DualOracle::new(Mlp::from_model(&c.state.sdm), Mlp::from_model(&c.state.tdm));
        let mut rep = Report::default();
        for it in 0..steps {
            let p = StepParams {
                lambda_sd: h.lambda_sd,
                lambda_td: h.lambda_td,
                lambda_cr: h.lambda_cr,
                sgd: SgdConfig {
                    lr: h.lr,
                    momentum: h.momentum,
                    weight_decay: h.weight_decay,
                },
                post_warmup,
                losses: LossToggles::default(),
                frozen_labels: None,
                iteration: it,
            };
            let out = fixbi_step(&mut c.state, &c.batch, &p).unwrap();
            let (o_sd, o_td) = oracle.step(&rows(&c.batch.xs), &c.batch.ys, &rows(&c.batch.xt), &h);
            for (name, a, b) in [
                ("fm_sd", out.sd.fm, o_sd.fm),
                ("fm_td", out.td.fm, o_td.fm),
                ("sp_sd", out.sd.sp, o_sd.sp),
                ("sp_td", out.td.sp, o_td.sp),
                ("bim_sd", out.sd.bim, o_sd.bim),
                ("bim_td", out.td.bim, o_td.bim),
                ("cr", out.sd.cr, o_sd.cr),
                ("tau_sd", out.stats_sd.tau, o_sd.tau),
                ("tau_td", out.stats_td.tau, o_td.tau),
            ] {
                rep.see(format!("step {it} {name}"), a, b);
            }
            for (tag, model, mlp) in [("sdm", &c.state.sdm, &oracle.sdm), ("tdm", &c.state.tdm, &oracle.tdm)] {
                for ((name, a), (_, b)) in Mlp::from_model(model).flat().into_iter().zip(mlp.flat()) {
                    rep.see(format!("step {it} {tag} {name}"), a, b);
                }
            }
            rep.num_sp += o_sd.num_sp + o_td.num_sp;
            rep.num_bim += o_sd.num_bim + o_td.num_bim;
        }
        rep
    }
}
