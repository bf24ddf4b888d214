//! Labeled source / unlabeled target datasets, synthetic shifted-domain
//! generators, the CSV interchange format and paired mini-batching.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

/// A feature matrix with training-view labels (−1 = unlabeled).
///
/// Target datasets may additionally carry ground truth that is only
/// reachable through [`Dataset::eval_labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<i64>,
    num_classes: usize,
    domain: DomainTag,
    hidden_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<i64>, num_classes: usize, domain: DomainTag) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape(format!(
                "features must be [N×d], got {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        for &y in &labels {
            if y < -1 || y >= num_classes as i64 {
                return Err(Error::invalid(format!("label {y} outside [-1, {num_classes})")));
            }
            if domain == DomainTag::Source && y == -1 {
                return Err(Error::invalid("source datasets must be fully labeled"));
            }
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            domain,
            hidden_labels: None,
        })
    }

    /// Target dataset whose true labels are kept out of the training view.
    pub fn target_with_hidden_labels(features: Tensor, truth: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = truth.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        let mut ds = Dataset::new(features, vec![-1; truth.len()], num_classes, DomainTag::Target)?;
        ds.hidden_labels = Some(truth);
        Ok(ds)
    }

    /// Re-tags a labeled dataset as target, moving its labels behind the
    /// evaluation accessor. Already-unlabeled data stays unlabeled.
    pub fn into_target_view(self) -> Result<Self> {
        if self.labels.iter().all(|&y| y >= 0) {
            let truth = self.labels.iter().map(|&y| y as usize).collect();
            Dataset::target_with_hidden_labels(self.features, truth, self.num_classes)
        } else if self.labels.iter().all(|&y| y == -1) {
            Dataset::new(self.features, self.labels, self.num_classes, DomainTag::Target)
        } else {
            Err(Error::invalid(
                "target data must be either fully labeled or fully unlabeled",
            ))
        }
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Training-view labels; always −1 for target data.
    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Ground-truth labels for evaluation, if known.
    pub fn eval_labels(&self) -> Option<Vec<usize>> {
        if let Some(h) = &self.hidden_labels {
            return Some(h.clone());
        }
        if self.labels.iter().all(|&y| y >= 0) {
            Some(self.labels.iter().map(|&y| y as usize).collect())
        } else {
            None
        }
    }

    /// Rows rendered in the CSV format, using evaluation labels when present.
    pub fn to_csv_string(&self) -> String {
        let labels: Vec<i64> = match &self.hidden_labels {
            Some(h) => h.iter().map(|&y| y as i64).collect(),
            None => self.labels.clone(),
        };
        write_csv_rows(&self.features, &labels, self.num_classes)
    }

    /// CSV of the training view only (target labels written as −1).
    pub fn to_training_csv_string(&self) -> String {
        write_csv_rows(&self.features, &self.labels, self.num_classes)
    }
}

fn write_csv_rows(features: &Tensor, labels: &[i64], num_classes: usize) -> String {
    let d = features.cols();
    let mut out = format!("# classes={num_classes} dim={d}\n");
    for (i, y) in labels.iter().enumerate() {
        for v in features.row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{y}");
    }
    out
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let err = |m: &str| Error::Parse {
        line: 1,
        message: m.to_string(),
    };
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| err("expected header `# classes=<K> dim=<d>`"))?;
    let (mut classes, mut dim) = (None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| err("malformed header token"))?;
        let v: usize = v.parse().map_err(|_| err("header values must be integers"))?;
        match k {
            "classes" => classes = Some(v),
            "dim" => dim = Some(v),
            _ => return Err(err("unknown header key")),
        }
    }
    match (classes, dim) {
        (Some(c), Some(d)) if c > 0 && d > 0 => Ok((c, d)),
        _ => Err(err("header needs positive `classes` and `dim`")),
    }
}

/// Parses the CSV dataset format. Fully unlabeled files become target
/// datasets, anything else source.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let (num_classes, dim) = parse_header(header)?;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} fields, found {}", dim + 1, fields.len()),
            });
        }
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("non-numeric feature `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite feature `{f}`"),
                });
            }
            feats.push(v);
        }
        let y: i64 = fields[dim].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label `{}` is not an integer", fields[dim]),
        })?;
        if y < -1 || y >= num_classes as i64 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("label {y} outside [-1, {num_classes})"),
            });
        }
        labels.push(y);
    }
    let n = labels.len();
    let features = Tensor::new(vec![n, dim], feats)?;
    let domain = if n > 0 && labels.iter().all(|&y| y == -1) {
        DomainTag::Target
    } else {
        DomainTag::Source
    };
    if domain == DomainTag::Source && labels.contains(&-1) {
        return Err(Error::Parse {
            line: labels.iter().position(|&y| y == -1).unwrap() + 2,
            message: "mixed labeled and unlabeled rows".into(),
        });
    }
    Dataset::new(features, labels, num_classes, domain)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ds.to_csv_string()).map_err(|e| Error::io(path, e))
}

fn rotate2(x: &mut [f64], angle_rad: f64, cx: f64, cy: f64) {
    let (s, c) = angle_rad.sin_cos();
    let (dx, dy) = (x[0] - cx, x[1] - cy);
    x[0] = cx + c * dx - s * dy;
    x[1] = cy + s * dx + c * dy;
}

/// Gaussian clusters whose target copy is rotated (first two dims) and translated.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobsShift {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub rotation_deg: f64,
    /// Empty means no translation; otherwise one entry per dimension.
    pub translation: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BlobsShift {
    /// Class means sit evenly on a circle in the first two dims, scaled so
    /// that neighbouring means are exactly one unit apart.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let k = self.num_classes;
        let radius = 0.5 / (std::f64::consts::PI / k as f64).sin();
        (0..k)
            .map(|c| {
                let a = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                let mut m = vec![0.0; self.dim];
                m[0] = radius * a.cos();
                m[1] = radius * a.sin();
                m
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("blobs need at least 2 classes"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("blobs need dim ≥ 2"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per_class must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if !self.translation.is_empty() && self.translation.len() != self.dim {
            return Err(Error::invalid(format!(
                "translation has {} entries, expected {}",
                self.translation.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn draw(&self, tag: &str) -> (Vec<f64>, Vec<usize>) {
        let means = self.class_means();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = rng::stream(self.seed, tag, 0);
        let mut feats = Vec::with_capacity(self.num_classes * self.per_class * self.dim);
        let mut labels = Vec::with_capacity(self.num_classes * self.per_class);
        for _ in 0..self.per_class {
            for (c, mean) in means.iter().enumerate() {
                for &m in mean {
                    feats.push(m + self.noise_sigma * normal.sample(&mut rng));
                }
                labels.push(c);
            }
        }
        (feats, labels)
    }

    /// Returns `(source, target)`; the target's labels are hidden.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let n = self.num_classes * self.per_class;
        let (src, ys) = self.draw("blobs-source");
        let (mut tgt, yt) = self.draw("blobs-target");
        let angle = self.rotation_deg.to_radians();
        for row in tgt.chunks_mut(self.dim) {
            rotate2(row, angle, 0.0, 0.0);
            for (v, t) in row.iter_mut().zip(&self.translation) {
                *v += t;
            }
        }
        let source = Dataset::new(
            Tensor::new(vec![n, self.dim], src)?,
            ys.iter().map(|&y| y as i64).collect(),
            self.num_classes,
            DomainTag::Source,
        )?;
        let target = Dataset::target_with_hidden_labels(Tensor::new(vec![n, self.dim], tgt)?, yt, self.num_classes)?;
        Ok((source, target))
    }
}

/// Two interleaved half circles; the target copy is rotated about their centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct MoonsShift {
    pub per_class: usize,
    pub rotation_deg: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MoonsShift {
    const CENTER: (f64, f64) = (0.5, 0.25);

    fn draw(&self, tag: &str) -> (Vec<f64>, Vec<usize>) {
        let mut rng = rng::stream(self.seed, tag, 0);
        let arc = Uniform::new_inclusive(0.0, std::f64::consts::PI).expect("valid range");
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut feats = Vec::with_capacity(4 * self.per_class);
        let mut labels = Vec::with_capacity(2 * self.per_class);
        for _ in 0..self.per_class {
            let t = arc.sample(&mut rng);
            feats.push(t.cos() + self.noise_sigma * normal.sample(&mut rng));
            feats.push(t.sin() + self.noise_sigma * normal.sample(&mut rng));
            labels.push(0);
            let t = arc.sample(&mut rng);
            feats.push(1.0 - t.cos() + self.noise_sigma * normal.sample(&mut rng));
            feats.push(0.5 - t.sin() + self.noise_sigma * normal.sample(&mut rng));
            labels.push(1);
        }
        (feats, labels)
    }

    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        if self.per_class == 0 {
            return Err(Error::invalid("per_class must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        let n = 2 * self.per_class;
        let (src, ys) = self.draw("moons-source");
        let (mut tgt, yt) = self.draw("moons-target");
        let angle = self.rotation_deg.to_radians();
        for row in tgt.chunks_mut(2) {
            rotate2(row, angle, Self::CENTER.0, Self::CENTER.1);
        }
        let source = Dataset::new(
            Tensor::new(vec![n, 2], src)?,
            ys.iter().map(|&y| y as i64).collect(),
            2,
            DomainTag::Source,
        )?;
        let target = Dataset::target_with_hidden_labels(Tensor::new(vec![n, 2], tgt)?, yt, 2)?;
        Ok((source, target))
    }
}

/// One aligned source/target mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub source_idx: Vec<usize>,
    pub target_idx: Vec<usize>,
    pub xs: Tensor,
    pub ys: Vec<usize>,
    pub xt: Tensor,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.source_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_idx.is_empty()
    }
}

/// `count` indices drawn as consecutive fresh permutations of `0..n`.
fn index_stream(n: usize, count: usize, seed: u64, epoch: u64, tag: &str) -> Vec<usize> {
    let mut rng = rng::stream(seed, tag, epoch);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let take = (count - out.len()).min(n);
        out.extend_from_slice(&perm[..take]);
    }
    out
}

/// Deterministic equal-size source/target batches for one epoch.
///
/// The epoch length is set by the larger dataset; the smaller one cycles
/// with a re-shuffle at each wraparound. Partial trailing batches are dropped.
pub fn paired_minibatches(
    source: &Dataset,
    target: &Dataset,
    batch_size: usize,
    epoch: u64,
    seed: u64,
) -> Result<Vec<PairedBatch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let (ns, nt) = (source.len(), target.len());
    if batch_size > ns.min(nt) {
        return Err(Error::invalid(format!(
            "batch size {batch_size} exceeds dataset sizes ({ns}, {nt})"
        )));
    }
    let num_batches = ns.max(nt) / batch_size;
    let count = num_batches * batch_size;
    let s_idx = index_stream(ns, count, seed, epoch, "batches-source");
    let t_idx = index_stream(nt, count, seed, epoch, "batches-target");
    let mut out = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let si = s_idx[b * batch_size..(b + 1) * batch_size].to_vec();
        let ti = t_idx[b * batch_size..(b + 1) * batch_size].to_vec();
        let ys = si.iter().map(|&i| source.labels()[i].max(0) as usize).collect();
        out.push(PairedBatch {
            xs: source.features().select_rows(&si),
            xt: target.features().select_rows(&ti),
            ys,
            source_idx: si,
            target_idx: ti,
        });
    }
    Ok(out)
}
