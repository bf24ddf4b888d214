use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{metrics_to_csv, MetricsRow};

/// Per-class accuracy; `None` for classes absent from the evaluation set.
pub fn classwise_accuracy(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Option<f64>>> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= num_classes {
            return Err(Error::invalid(format!(
                "label {t} out of range for {num_classes} classes"
            )));
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect())
}

/// Class-wise accuracies of both models and their ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ClasswiseTable {
    pub sdm: Vec<Option<f64>>,
    pub tdm: Vec<Option<f64>>,
    pub ensemble: Vec<Option<f64>>,
    /// Classes with the largest |SDM - TDM| gap, largest first.
    pub top_gap: Vec<usize>,
}

impl ClasswiseTable {
    pub fn build(
        sdm: &[usize],
        tdm: &[usize],
        ens: &[usize],
        truth: &[usize],
        num_classes: usize,
        top_n: usize,
    ) -> Result<Self> {
        let sdm = classwise_accuracy(sdm, truth, num_classes)?;
        let tdm = classwise_accuracy(tdm, truth, num_classes)?;
        let ensemble = classwise_accuracy(ens, truth, num_classes)?;
        let top_gap = top_gap_classes(&sdm, &tdm, top_n);
        Ok(Self {
            sdm,
            tdm,
            ensemble,
            top_gap,
        })
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        let mut out = String::from("class,acc_sdm,acc_tdm,acc_ens,gap,gap_rank\n");
        for c in 0..self.sdm.len() {
            let gap = match (self.sdm[c], self.tdm[c]) {
                (Some(a), Some(b)) => (a - b).abs().to_string(),
                _ => "undefined".to_string(),
            };
            let rank = self
                .top_gap
                .iter()
                .position(|&k| k == c)
                .map_or_else(String::new, |r| (r + 1).to_string());
            let _ = writeln!(
                out,
                "{c},{},{},{},{gap},{rank}",
                cell(self.sdm[c]),
                cell(self.tdm[c]),
                cell(self.ensemble[c])
            );
        }
        out
    }
}

/// Top `n` defined classes by absolute accuracy gap; ties go to the lower
/// class index.
pub fn top_gap_classes(a: &[Option<f64>], b: &[Option<f64>], n: usize) -> Vec<usize> {
    let mut gaps: Vec<(usize, f64)> = a
        .iter()
        .zip(b)
        .enumerate()
        .filter_map(|(c, (x, y))| Some((c, (x.as_ref()? - y.as_ref()?).abs())))
        .collect();
    gaps.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    gaps.into_iter().take(n).map(|(c, _)| c).collect()
}

/// Writes `metrics.csv` and, when `chart` is set, `tau.svg`.
pub fn emit_report(rows: &[MetricsRow], out_dir: &Path, chart: bool) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no metrics to report"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("metrics.csv");
    fs::write(&path, metrics_to_csv(rows)).map_err(|e| Error::io(&path, e))?;
    if chart {
        let path = out_dir.join("tau.svg");
        fs::write(&path, tau_chart_svg(rows)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Line chart of the per-epoch mean τ of both models.
pub fn tau_chart_svg(rows: &[MetricsRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    let last = rows.iter().map(|r| r.epoch).max().unwrap_or(1).max(2) as f64;
    let first = rows.iter().map(|r| r.epoch).min().unwrap_or(1) as f64;
    let span = (last - first).max(1.0);
    let x = |e: usize| PAD + (e as f64 - first) / span * (W - 2.0 * PAD);
    let y = |t: f64| H - PAD - t.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let line = |pick: fn(&MetricsRow) -> f64| {
        rows.iter()
            .map(|r| format!("{:.2},{:.2}", x(r.epoch), y(pick(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{t}</text>"#,
            PAD - 4.0,
            y(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#,
        W / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke-width="2" style="stroke:#1f77b4"/>"#,
        line(|r| r.tau_sd)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke-width="2" style="stroke:#d62728"/>"#,
        line(|r| r.tau_td)
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="20" font-size="12" fill="#1f77b4">tau SDM</text>"##,
        PAD + 10.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="20" font-size="12" fill="#d62728">tau TDM</text>"##,
        PAD + 90.0
    );
    s.push_str("</svg>\n");
    s
}
