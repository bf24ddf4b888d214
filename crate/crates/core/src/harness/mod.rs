//! Config-driven experiments: baseline pretraining, dual-model training,
//! final evaluation and the files describing the run.

mod report;

use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

pub use crate::config::{BaselineKind, DatasetSpec, LossToggles, PseudoLabelSource, TrainConfig};
pub use report::{classwise_accuracy, emit_report, tau_chart_svg, top_gap_classes, ClasswiseTable};

use crate::baseline::{train_dann, train_source_only, BaselineResult};
use crate::data::{load_csv, Dataset};
use crate::error::{Error, Result};
use crate::fixbi::{train_fixbi_with, FixbiRun};
use crate::metrics::{thresholds_to_csv, MetricsRow};
use crate::models::{ensemble_predict, ClassifierModel};

/// Source and target sets named by the config.
pub fn load_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSpec::Blobs { .. } => cfg.dataset.blobs_generator(cfg.seed).expect("blobs spec").generate(),
        DatasetSpec::Moons { .. } => cfg.dataset.moons_generator(cfg.seed).expect("moons spec").generate(),
        DatasetSpec::Csv { source, target } => {
            let s = load_csv(source)?;
            let t = load_csv(target)?;
            // training must never see target labels
            let t = match t.eval_labels() {
                Some(_) => t.into_target_view()?,
                None => t,
            };
            Ok((s, t))
        }
    }
}

pub fn train_baseline(cfg: &TrainConfig, source: &Dataset, target: &Dataset) -> Result<BaselineResult> {
    match cfg.baseline {
        BaselineKind::SourceOnly => train_source_only(cfg, source, target),
        BaselineKind::Dann => train_dann(cfg, source, target),
    }
}

/// Headline numbers of one run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub baseline: BaselineKind,
    pub baseline_source_acc: f64,
    pub baseline_target_acc: f64,
    pub sdm_target_acc: f64,
    pub tdm_target_acc: f64,
    /// Ensemble target accuracy of the last epoch.
    pub target_acc: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
}

impl ExperimentSummary {
    fn from_run(cfg: &TrainConfig, base: &BaselineResult, last: &MetricsRow) -> Self {
        Self {
            seed: cfg.seed,
            baseline: cfg.baseline,
            baseline_source_acc: base.source_acc,
            baseline_target_acc: base.target_acc,
            sdm_target_acc: last.acc_tgt_sd,
            tdm_target_acc: last.acc_tgt_td,
            target_acc: last.acc_tgt_ens,
            epochs: cfg.epochs,
            warmup_epochs: cfg.warmup_epochs,
        }
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "seed": self.seed,
            "baseline": self.baseline.as_str(),
            "baseline_source_acc": self.baseline_source_acc,
            "baseline_target_acc": self.baseline_target_acc,
            "sdm_target_acc": self.sdm_target_acc,
            "tdm_target_acc": self.tdm_target_acc,
            "target_acc": self.target_acc,
            "epochs": self.epochs,
            "warmup_epochs": self.warmup_epochs,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("json values are plain");
        s.push('\n');
        s
    }
}

/// All in-memory products of a run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub baseline: BaselineResult,
    pub fixbi: FixbiRun,
    pub summary: ExperimentSummary,
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Loads, validates and runs the config at `config_path`.
pub fn run_experiment(config_path: &Path, out_dir: &Path) -> Result<ExperimentSummary> {
    let cfg = TrainConfig::load(config_path)?;
    Ok(run_config(&cfg, out_dir)?.summary)
}

/// Baseline pretraining, dual-model training and evaluation. Metrics
/// written before a failure are left in `out_dir`.
pub fn run_config(cfg: &TrainConfig, out_dir: &Path) -> Result<Experiment> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(out_dir.join("config.conf"), cfg.to_text())?;
    let (source, target) = load_datasets(cfg)?;

    let base = train_baseline(cfg, &source, &target)?;
    base.model.save(out_dir.join("baseline.ckpt"))?;

    let mut partial = Vec::new();
    let run = match train_fixbi_with(cfg, &source, &target, &base.model, &mut |row| partial.push(row.clone())) {
        Ok(run) => run,
        Err(e) => {
            if !partial.is_empty() {
                emit_report(&partial, out_dir, false)?;
            }
            return Err(e);
        }
    };

    emit_report(&run.metrics, out_dir, true)?;
    write(out_dir.join("threshold.csv"), thresholds_to_csv(&run.thresholds))?;
    run.state.sdm.save(out_dir.join("sdm.ckpt"))?;
    run.state.tdm.save(out_dir.join("tdm.ckpt"))?;
    write(
        out_dir.join("features.csv"),
        features_csv(&run.state.sdm, &run.state.tdm, &source, &target)?,
    )?;
    if let Some(truth) = target.eval_labels() {
        let x = target.features();
        let table = ClasswiseTable::build(
            &run.state.sdm.predict(x)?,
            &run.state.tdm.predict(x)?,
            &ensemble_predict(&run.state.sdm, &run.state.tdm, x)?,
            &truth,
            target.num_classes(),
            cfg.classwise_top_n,
        )?;
        write(out_dir.join("classwise.csv"), table.to_csv())?;
    }

    let last = run.metrics.last().ok_or_else(|| Error::invalid("no epochs were run"))?;
    let summary = ExperimentSummary::from_run(cfg, &base, last);
    write(out_dir.join("summary.json"), summary.to_json())?;
    Ok(Experiment {
        baseline: base,
        fixbi: run,
        summary,
    })
}

/// Penultimate-layer features of both models on both domains, one row per
/// (model, sample). Labels are ground truth, `-1` where unknown.
pub fn features_csv(
    sdm: &ClassifierModel,
    tdm: &ClassifierModel,
    source: &Dataset,
    target: &Dataset,
) -> Result<String> {
    let dim = sdm.arch().feature_dim();
    let mut out = String::from("model,domain,label");
    for j in 0..dim {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (name, model) in [("sdm", sdm), ("tdm", tdm)] {
        for ds in [source, target] {
            let (feats, _) = model.forward(ds.features())?;
            let labels: Vec<i64> = match ds.eval_labels() {
                Some(l) => l.into_iter().map(|v| v as i64).collect(),
                None => vec![-1; ds.len()],
            };
            for (i, label) in labels.iter().enumerate() {
                let _ = write!(out, "{name},{},{label}", ds.domain().as_str());
                for v in feats.row(i) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Runs one experiment per seed concurrently, each in `out_dir/seed-<s>`.
pub fn run_seeds(
    cfg: &TrainConfig,
    seeds: RangeInclusive<u64>,
    out_dir: &Path,
) -> Vec<(u64, Result<ExperimentSummary>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .map(|seed| {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                let dir = out_dir.join(format!("seed-{seed}"));
                (seed, scope.spawn(move || run_config(&cfg, &dir).map(|e| e.summary)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(seed, h)| {
                (
                    seed,
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Consistency("worker panicked".into()))),
                )
            })
            .collect()
    })
}

/// Parses `a..b` or `a..=b` (both inclusive) or a single seed.
pub fn parse_seed_range(text: &str) -> Result<RangeInclusive<u64>> {
    let bad = || Error::invalid(format!("bad seed range `{text}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let r = match text.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.trim_start_matches('='))?,
        None => {
            let s = num(text)?;
            s..=s
        }
    };
    if r.is_empty() {
        return Err(bad());
    }
    Ok(r)
}

/// Two-column text table, used for ablation and ratio-rule summaries.
pub fn format_table(title: &str, rows: &[(String, f64)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(title.len());
    let mut out = format!("{title:<width$}  target_acc\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {:.4}", v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("1..5").unwrap(), 1..=5);
        assert_eq!(parse_seed_range("1..=5").unwrap(), 1..=5);
        assert_eq!(parse_seed_range("7").unwrap(), 7..=7);
        assert!(parse_seed_range("5..1").is_err());
        assert!(parse_seed_range("x").is_err());
    }

    #[test]
    fn table_lists_every_row() {
        let t = format_table("rule", &[("fixed".into(), 0.9), ("random".into(), 0.85)]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("0.8500"));
    }
}
