//! MLP classifiers with a learnable softmax temperature, the domain
//! discriminator used by the adversarial baseline, the two-model ensemble
//! and the checkpoint format.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, ParamVars, Var};
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::rng;
use crate::tensor::{argmax, softmax_t, Tensor};

pub const LOG_TEMPERATURE: &str = "log_temperature";
const CHECKPOINT_MAGIC: &str = "FIXBI-CKPT v1";

fn layer_names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias"))
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights stored `[fan_in×fan_out]`; zero biases.
fn init_affine(
    params: &mut ParamSet,
    weight: String,
    bias: String,
    fan_in: usize,
    fan_out: usize,
    rng: &mut rng::Rng,
) -> Result<()> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::invalid(e.to_string()))?;
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    params.insert(weight, Tensor::new(vec![fan_in, fan_out], w)?)?;
    params.insert(bias, Tensor::zeros(&[fan_out]))?;
    Ok(())
}

fn affine(g: &mut Graph, vars: &ParamVars, weight: &str, bias: &str, x: Var) -> Result<Var> {
    let w = vars.get(weight)?;
    let b = vars.get(bias)?;
    let h = g.matmul(x, w)?;
    g.add_bias(h, b)
}

/// Architecture of a [`ClassifierModel`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub input_dim: usize,
    /// Hidden widths of the extractor; the last one is the feature width.
    pub widths: Vec<usize>,
    pub num_classes: usize,
}

impl Arch {
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&self.input_dim)
    }
}

/// Feature extractor (ReLU MLP) + linear head + scalar log-temperature θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    arch: Arch,
    params: ParamSet,
}

/// Graph handles produced by [`ClassifierModel::forward_graph`].
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub features: Var,
    pub logits: Var,
}

impl ClassifierModel {
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        if arch.widths.is_empty() {
            return Err(Error::invalid("extractor widths must be non-empty"));
        }
        if arch.input_dim == 0 || arch.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if arch.num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let mut rng = rng::stream(seed, "classifier-init", 0);
        let mut params = ParamSet::new();
        let mut fan_in = arch.input_dim;
        for (i, &w) in arch.widths.iter().enumerate() {
            let (wn, bn) = layer_names("extractor", i);
            init_affine(&mut params, wn, bn, fan_in, w, &mut rng)?;
            fan_in = w;
        }
        init_affine(
            &mut params,
            "head.weight".into(),
            "head.bias".into(),
            fan_in,
            arch.num_classes,
            &mut rng,
        )?;
        params.insert(LOG_TEMPERATURE, Tensor::scalar(0.0))?;
        Ok(ClassifierModel { arch, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn log_temperature(&self) -> f64 {
        self.params
            .get(LOG_TEMPERATURE)
            .and_then(|t| t.item().ok())
            .unwrap_or(0.0)
    }

    /// `T = exp(θ)`, positive by construction.
    pub fn temperature(&self) -> f64 {
        self.log_temperature().exp()
    }

    /// Records features and logits for `x` on `g`.
    pub fn forward_graph(&self, g: &mut Graph, vars: &ParamVars, x: Var) -> Result<ModelOutput> {
        let d = g.value(x).cols();
        if g.value(x).shape().len() != 2 || d != self.arch.input_dim {
            return Err(Error::shape(format!(
                "model expects [B×{}] input, got {:?}",
                self.arch.input_dim,
                g.value(x).shape()
            )));
        }
        let mut h = x;
        for i in 0..self.arch.widths.len() {
            let (wn, bn) = layer_names("extractor", i);
            let a = affine(g, vars, &wn, &bn, h)?;
            h = g.relu(a);
        }
        let logits = affine(g, vars, "head.weight", "head.bias", h)?;
        Ok(ModelOutput { features: h, logits })
    }

    fn eval_logits(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = g.bind_frozen(&self.params);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &vars, xv)?;
        Ok((g.value(out.features).clone(), g.value(out.logits).clone()))
    }

    /// `(features, softmax(logits))` at unit temperature.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (features, logits) = self.eval_logits(x)?;
        Ok((features, softmax_t(&logits, 1.0)?))
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }

    /// Checkpoint text in the `FIXBI-CKPT v1` format.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC}\n");
        let mut names: Vec<String> = Vec::new();
        for i in 0..self.arch.widths.len() {
            let (w, b) = layer_names("extractor", i);
            names.push(w);
            names.push(b);
        }
        names.extend([
            "head.weight".to_string(),
            "head.bias".to_string(),
            LOG_TEMPERATURE.to_string(),
        ]);
        for name in names {
            let t = self.params.get(&name).expect("parameter present by construction");
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "name {name} shape {}", shape.join(","));
            let values: Vec<String> = t.data().iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let perr = |line: usize, m: String| Error::Parse { line, message: m };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            _ => return Err(perr(1, format!("missing `{CHECKPOINT_MAGIC}` header"))),
        }
        let mut params = ParamSet::new();
        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split(' ').collect();
            let ["name", name, "shape", shape] = toks.as_slice() else {
                return Err(perr(ln, "expected `name <name> shape <dims>`".into()));
            };
            let shape: Vec<usize> = shape
                .split(',')
                .map(|s| s.parse().map_err(|_| perr(ln, format!("bad dimension `{s}`"))))
                .collect::<Result<_>>()?;
            let (vln, values) = lines.next().ok_or_else(|| perr(ln + 1, "missing value line".into()))?;
            let values: Vec<f64> = if values.is_empty() {
                Vec::new()
            } else {
                values
                    .split(' ')
                    .map(|s| s.parse().map_err(|_| perr(vln, format!("bad value `{s}`"))))
                    .collect::<Result<_>>()?
            };
            let t = Tensor::new(shape, values).map_err(|e| perr(vln, e.to_string()))?;
            params.insert(*name, t).map_err(|e| perr(ln, e.to_string()))?;
        }
        Self::from_params(params)
    }

    /// Reconstructs the architecture from parameter shapes.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let missing = |n: &str| Error::Consistency(format!("checkpoint lacks `{n}`"));
        let mut widths = Vec::new();
        let mut input_dim = None;
        let mut fan_in = None;
        for i in 0.. {
            let (wn, bn) = layer_names("extractor", i);
            let Some(w) = params.get(&wn) else { break };
            let b = params.get(&bn).ok_or_else(|| missing(&bn))?;
            let [rows, cols] = *w.shape() else {
                return Err(Error::shape(format!("`{wn}` must be a matrix")));
            };
            if b.shape() != [cols] || fan_in.is_some_and(|f| f != rows) {
                return Err(Error::Consistency(format!("layer {i} shapes do not chain")));
            }
            input_dim.get_or_insert(rows);
            fan_in = Some(cols);
            widths.push(cols);
        }
        let head = params.get("head.weight").ok_or_else(|| missing("head.weight"))?;
        let [hr, num_classes] = *head.shape() else {
            return Err(Error::shape("`head.weight` must be a matrix"));
        };
        if Some(hr) != fan_in {
            return Err(Error::Consistency("head does not match extractor output".into()));
        }
        let hb = params.get("head.bias").ok_or_else(|| missing("head.bias"))?;
        if hb.shape() != [num_classes] {
            return Err(Error::Consistency("head bias shape".into()));
        }
        let t = params.get(LOG_TEMPERATURE).ok_or_else(|| missing(LOG_TEMPERATURE))?;
        if t.shape() != [1] {
            return Err(Error::Consistency("log_temperature must have shape 1".into()));
        }
        let expected = 2 * widths.len() + 3;
        if params.len() != expected {
            return Err(Error::Consistency("checkpoint has unexpected parameters".into()));
        }
        let input_dim = input_dim.ok_or_else(|| missing("extractor.0.weight"))?;
        Ok(ClassifierModel {
            arch: Arch {
                input_dim,
                widths,
                num_classes,
            },
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Small MLP mapping features to source/target logits.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDiscriminator {
    params: ParamSet,
    hidden: usize,
    pub grl_lambda: f64,
}

impl DomainDiscriminator {
    pub fn init(feature_dim: usize, hidden: usize, grl_lambda: f64, seed: u64) -> Result<Self> {
        if !(grl_lambda >= 0.0) {
            return Err(Error::invalid("grl_lambda must be non-negative"));
        }
        let mut rng = rng::stream(seed, "discriminator-init", 0);
        let mut params = ParamSet::new();
        init_affine(
            &mut params,
            "disc.0.weight".into(),
            "disc.0.bias".into(),
            feature_dim,
            hidden,
            &mut rng,
        )?;
        init_affine(
            &mut params,
            "disc.1.weight".into(),
            "disc.1.bias".into(),
            hidden,
            2,
            &mut rng,
        )?;
        Ok(DomainDiscriminator {
            params,
            hidden,
            grl_lambda,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Domain logits `[B×2]` for features routed through gradient reversal.
    pub fn forward_graph(&self, g: &mut Graph, vars: &ParamVars, features: Var) -> Result<Var> {
        let reversed = g.grl(features, self.grl_lambda)?;
        let a = affine(g, vars, "disc.0.weight", "disc.0.bias", reversed)?;
        let h = g.relu(a);
        affine(g, vars, "disc.1.weight", "disc.1.bias", h)
    }
}

/// Argmax of `p + q` per row, ties to the lower class.
pub fn ensemble_from_probs(p: &Tensor, q: &Tensor) -> Result<Vec<usize>> {
    if p.cols() != q.cols() {
        return Err(Error::Consistency(format!(
            "class counts differ: {} vs {}",
            p.cols(),
            q.cols()
        )));
    }
    let summed = p.zip_map(q, |a, b| a + b)?;
    Ok((0..summed.rows()).map(|i| argmax(summed.row(i))).collect())
}

/// Labels from the summed softmax outputs of both models.
pub fn ensemble_predict(sdm: &ClassifierModel, tdm: &ClassifierModel, x: &Tensor) -> Result<Vec<usize>> {
    if sdm.num_classes() != tdm.num_classes() {
        return Err(Error::Consistency(format!(
            "class counts differ: {} vs {}",
            sdm.num_classes(),
            tdm.num_classes()
        )));
    }
    ensemble_from_probs(&sdm.predict_proba(x)?, &tdm.predict_proba(x)?)
}

/// The source-dominant / target-dominant model pair. Each model's
/// momentum buffers live inside its parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub sdm: ClassifierModel,
    pub tdm: ClassifierModel,
    pub epoch: usize,
}

impl DualState {
    /// Both models start as copies of `init` with fresh optimizer state.
    pub fn from_pretrained(init: &ClassifierModel) -> Self {
        let mut sdm = init.clone();
        sdm.params_mut().reset_momentum();
        let tdm = sdm.clone();
        DualState { sdm, tdm, epoch: 0 }
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
