//! Experiment configuration and its flat `key = value` text format.
//!
//! ```text
//! # comment
//! epochs = 60
//! dataset.kind = blobs
//! dataset.rotation_deg = 50
//! arch.widths = 64,64,32
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{BlobsShift, MoonsShift};
use crate::error::{Error, Result};
use crate::fixbi::RatioRule;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        rotation_deg: f64,
        translation: Vec<f64>,
        noise_sigma: f64,
    },
    Moons {
        per_class: usize,
        rotation_deg: f64,
        noise_sigma: f64,
    },
    Csv {
        source: PathBuf,
        target: PathBuf,
    },
}

impl DatasetSpec {
    pub fn blobs_generator(&self, seed: u64) -> Option<BlobsShift> {
        match self {
            DatasetSpec::Blobs {
                num_classes,
                per_class,
                dim,
                rotation_deg,
                translation,
                noise_sigma,
            } => Some(BlobsShift {
                num_classes: *num_classes,
                per_class: *per_class,
                dim: *dim,
                rotation_deg: *rotation_deg,
                translation: translation.clone(),
                noise_sigma: *noise_sigma,
                seed,
            }),
            _ => None,
        }
    }

    pub fn moons_generator(&self, seed: u64) -> Option<MoonsShift> {
        match self {
            DatasetSpec::Moons {
                per_class,
                rotation_deg,
                noise_sigma,
            } => Some(MoonsShift {
                per_class: *per_class,
                rotation_deg: *rotation_deg,
                noise_sigma: *noise_sigma,
                seed,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoLabelSource {
    /// Recomputed every iteration from the model being trained.
    Live,
    /// Fixed once from the pretrained baseline.
    FrozenBaseline,
}

impl PseudoLabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PseudoLabelSource::Live => "live",
            PseudoLabelSource::FrozenBaseline => "frozen-baseline",
        }
    }
}

impl FromStr for PseudoLabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(PseudoLabelSource::Live),
            "frozen-baseline" => Ok(PseudoLabelSource::FrozenBaseline),
            other => Err(Error::invalid(format!("unknown pseudo-label source `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    SourceOnly,
    Dann,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::SourceOnly => "source-only",
            BaselineKind::Dann => "dann",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source-only" => Ok(BaselineKind::SourceOnly),
            "dann" => Ok(BaselineKind::Dann),
            other => Err(Error::invalid(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Which FixBi loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossToggles {
    pub fm: bool,
    pub bim: bool,
    pub sp: bool,
    pub cr: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            fm: true,
            bim: true,
            sp: true,
            cr: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub widths: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda_sd: f64,
    pub lambda_td: f64,
    pub lambda_cr: f64,
    pub ratio_rule: RatioRule,
    pub alpha: f64,
    pub pseudo_label_source: PseudoLabelSource,
    pub losses: LossToggles,
    pub grl_lambda: f64,
    pub baseline: BaselineKind,
    pub baseline_epochs: usize,
    /// Learning rate for baseline pretraining; `None` reuses `lr`.
    pub baseline_lr: Option<f64>,
    pub discriminator_hidden: usize,
    /// Allows `λ_sd + λ_td ≠ 1` under the fixed rule (single-perspective pairs).
    pub single_perspective: bool,
    pub classwise_top_n: usize,
    pub log_wall_time: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetSpec::Blobs {
                num_classes: 3,
                per_class: 100,
                dim: 2,
                rotation_deg: 50.0,
                translation: Vec::new(),
                noise_sigma: 0.1,
            },
            widths: vec![64, 64, 32],
            batch_size: 32,
            epochs: 60,
            warmup_epochs: 30,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.005,
            lambda_sd: 0.7,
            lambda_td: 0.3,
            lambda_cr: 0.5,
            ratio_rule: RatioRule::Fixed,
            alpha: 1.0,
            pseudo_label_source: PseudoLabelSource::Live,
            losses: LossToggles::default(),
            grl_lambda: 1.0,
            baseline: BaselineKind::SourceOnly,
            baseline_epochs: 30,
            baseline_lr: None,
            discriminator_hidden: 32,
            single_perspective: false,
            classwise_top_n: 10,
            log_wall_time: false,
            seed: 0,
        }
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| cfg_err(field, format!("cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(field: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_value(field, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn baseline_lr(&self) -> f64 {
        self.baseline_lr.unwrap_or(self.lr)
    }

    /// Parses config text on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut kind: Option<String> = None;
        let mut ds: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset.kind" => kind = Some(value.to_string()),
                k if k.starts_with("dataset.") => ds.push((k.to_string(), value.to_string())),
                _ => cfg.set(key, value)?,
            }
        }
        if kind.is_some() || !ds.is_empty() {
            cfg.dataset = build_dataset(kind.as_deref().unwrap_or("blobs"), &ds)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "arch.widths" => self.widths = parse_list(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "lambda_sd" => self.lambda_sd = parse_value(key, v)?,
            "lambda_td" => self.lambda_td = parse_value(key, v)?,
            "lambda_cr" => self.lambda_cr = parse_value(key, v)?,
            "ratio_rule" => self.ratio_rule = v.parse().map_err(|_| cfg_err(key, format!("unknown rule `{v}`")))?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "pseudo_label_source" => {
                self.pseudo_label_source = v
                    .parse()
                    .map_err(|_| cfg_err(key, format!("expected live or frozen-baseline, got `{v}`")))?
            }
            "loss.fm" => self.losses.fm = parse_value(key, v)?,
            "loss.bim" => self.losses.bim = parse_value(key, v)?,
            "loss.sp" => self.losses.sp = parse_value(key, v)?,
            "loss.cr" => self.losses.cr = parse_value(key, v)?,
            "grl_lambda" => self.grl_lambda = parse_value(key, v)?,
            "baseline" => {
                self.baseline = v
                    .parse()
                    .map_err(|_| cfg_err(key, format!("expected dann or source-only, got `{v}`")))?
            }
            "baseline_epochs" => self.baseline_epochs = parse_value(key, v)?,
            "baseline_lr" => self.baseline_lr = if v == "none" { None } else { Some(parse_value(key, v)?) },
            "discriminator_hidden" => self.discriminator_hidden = parse_value(key, v)?,
            "single_perspective" => self.single_perspective = parse_value(key, v)?,
            "classwise_top_n" => self.classwise_top_n = parse_value(key, v)?,
            "log_wall_time" => self.log_wall_time = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            other => return Err(cfg_err(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(cfg_err("epochs", "must be at least 1"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(cfg_err("warmup_epochs", "must not exceed epochs"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(cfg_err("arch.widths", "needs at least one positive width"));
        }
        if !(self.lr > 0.0) {
            return Err(cfg_err("lr", "must be positive"));
        }
        if let Some(lr) = self.baseline_lr {
            if !(lr > 0.0) {
                return Err(cfg_err("baseline_lr", "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(cfg_err("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(cfg_err("weight_decay", "must be non-negative"));
        }
        for (field, v) in [("lambda_sd", self.lambda_sd), ("lambda_td", self.lambda_td)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(cfg_err(field, "must lie in [0, 1]"));
            }
        }
        if self.ratio_rule == RatioRule::Fixed && !self.single_perspective && self.lambda_sd + self.lambda_td != 1.0 {
            return Err(cfg_err(
                "lambda_td",
                "lambda_sd + lambda_td must equal 1 under the fixed rule",
            ));
        }
        if self.lambda_cr != 0.5 {
            return Err(cfg_err("lambda_cr", "is fixed at 0.5"));
        }
        if self.ratio_rule != RatioRule::Fixed && !(self.alpha > 0.0) {
            return Err(cfg_err("alpha", "must be positive"));
        }
        if !(self.grl_lambda >= 0.0) {
            return Err(cfg_err("grl_lambda", "must be non-negative"));
        }
        if self.discriminator_hidden == 0 {
            return Err(cfg_err("discriminator_hidden", "must be positive"));
        }
        match &self.dataset {
            DatasetSpec::Blobs {
                num_classes,
                per_class,
                dim,
                translation,
                noise_sigma,
                ..
            } => {
                if *num_classes < 2 {
                    return Err(cfg_err("dataset.num_classes", "must be at least 2"));
                }
                if *dim < 2 {
                    return Err(cfg_err("dataset.dim", "must be at least 2"));
                }
                if *per_class == 0 {
                    return Err(cfg_err("dataset.per_class", "must be positive"));
                }
                if !translation.is_empty() && translation.len() != *dim {
                    return Err(cfg_err("dataset.translation", "needs one entry per dimension"));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(cfg_err("dataset.noise_sigma", "must be non-negative"));
                }
            }
            DatasetSpec::Moons {
                per_class, noise_sigma, ..
            } => {
                if *per_class == 0 {
                    return Err(cfg_err("dataset.per_class", "must be positive"));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(cfg_err("dataset.noise_sigma", "must be non-negative"));
                }
            }
            DatasetSpec::Csv { .. } => {}
        }
        Ok(())
    }

    /// Canonical text form; every key is written.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSpec::Blobs {
                num_classes,
                per_class,
                dim,
                rotation_deg,
                translation,
                noise_sigma,
            } => {
                kv("dataset.kind", "blobs".into());
                kv("dataset.num_classes", num_classes.to_string());
                kv("dataset.per_class", per_class.to_string());
                kv("dataset.dim", dim.to_string());
                kv("dataset.rotation_deg", rotation_deg.to_string());
                kv("dataset.translation", join(translation));
                kv("dataset.noise_sigma", noise_sigma.to_string());
            }
            DatasetSpec::Moons {
                per_class,
                rotation_deg,
                noise_sigma,
            } => {
                kv("dataset.kind", "moons".into());
                kv("dataset.per_class", per_class.to_string());
                kv("dataset.rotation_deg", rotation_deg.to_string());
                kv("dataset.noise_sigma", noise_sigma.to_string());
            }
            DatasetSpec::Csv { source, target } => {
                kv("dataset.kind", "csv".into());
                kv("dataset.source", source.display().to_string());
                kv("dataset.target", target.display().to_string());
            }
        }
        kv("arch.widths", join(&self.widths));
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("lambda_sd", self.lambda_sd.to_string());
        kv("lambda_td", self.lambda_td.to_string());
        kv("lambda_cr", self.lambda_cr.to_string());
        kv("ratio_rule", self.ratio_rule.as_str().into());
        kv("alpha", self.alpha.to_string());
        kv("pseudo_label_source", self.pseudo_label_source.as_str().into());
        kv("loss.fm", self.losses.fm.to_string());
        kv("loss.bim", self.losses.bim.to_string());
        kv("loss.sp", self.losses.sp.to_string());
        kv("loss.cr", self.losses.cr.to_string());
        kv("grl_lambda", self.grl_lambda.to_string());
        kv("baseline", self.baseline.as_str().into());
        kv("baseline_epochs", self.baseline_epochs.to_string());
        kv("baseline_lr", self.baseline_lr.map_or("none".into(), |v| v.to_string()));
        kv("discriminator_hidden", self.discriminator_hidden.to_string());
        kv("single_perspective", self.single_perspective.to_string());
        kv("classwise_top_n", self.classwise_top_n.to_string());
        kv("log_wall_time", self.log_wall_time.to_string());
        kv("seed", self.seed.to_string());
        out
    }
}

fn build_dataset(kind: &str, entries: &[(String, String)]) -> Result<DatasetSpec> {
    let mut spec = match kind {
        "blobs" => TrainConfig::default().dataset,
        "moons" => DatasetSpec::Moons {
            per_class: 100,
            rotation_deg: 30.0,
            noise_sigma: 0.1,
        },
        "csv" => DatasetSpec::Csv {
            source: PathBuf::new(),
            target: PathBuf::new(),
        },
        other => return Err(cfg_err("dataset.kind", format!("unknown dataset kind `{other}`"))),
    };
    for (key, v) in entries {
        let field = key.as_str();
        match (&mut spec, field) {
            (DatasetSpec::Blobs { num_classes, .. }, "dataset.num_classes") => *num_classes = parse_value(field, v)?,
            (DatasetSpec::Blobs { per_class, .. }, "dataset.per_class")
            | (DatasetSpec::Moons { per_class, .. }, "dataset.per_class") => *per_class = parse_value(field, v)?,
            (DatasetSpec::Blobs { dim, .. }, "dataset.dim") => *dim = parse_value(field, v)?,
            (DatasetSpec::Blobs { rotation_deg, .. }, "dataset.rotation_deg")
            | (DatasetSpec::Moons { rotation_deg, .. }, "dataset.rotation_deg") => {
                *rotation_deg = parse_value(field, v)?
            }
            (DatasetSpec::Blobs { translation, .. }, "dataset.translation") => *translation = parse_list(field, v)?,
            (DatasetSpec::Blobs { noise_sigma, .. }, "dataset.noise_sigma")
            | (DatasetSpec::Moons { noise_sigma, .. }, "dataset.noise_sigma") => *noise_sigma = parse_value(field, v)?,
            (DatasetSpec::Csv { source, .. }, "dataset.source") => *source = PathBuf::from(v),
            (DatasetSpec::Csv { target, .. }, "dataset.target") => *target = PathBuf::from(v),
            _ => return Err(cfg_err(field, format!("not a `{kind}` dataset key"))),
        }
    }
    if let DatasetSpec::Csv { source, target } = &spec {
        if source.as_os_str().is_empty() || target.as_os_str().is_empty() {
            return Err(cfg_err(
                "dataset.source",
                "csv datasets need both source and target paths",
            ));
        }
    }
    Ok(spec)
}
