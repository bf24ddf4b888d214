use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 18] = [
    "epoch",
    "fm_sd",
    "fm_td",
    "bim_sd",
    "bim_td",
    "sp_sd",
    "sp_td",
    "cr",
    "tau_sd",
    "tau_td",
    "n_above_sd",
    "n_above_td",
    "acc_src_sd",
    "acc_src_td",
    "acc_tgt_sd",
    "acc_tgt_td",
    "acc_tgt_ens",
    "wall_ms",
];

/// One epoch of dual-model training. Losses and τ are batch means;
/// `n_above_*` are totals over the epoch's batches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub fm_sd: f64,
    pub fm_td: f64,
    pub bim_sd: f64,
    pub bim_td: f64,
    pub sp_sd: f64,
    pub sp_td: f64,
    pub cr: f64,
    pub tau_sd: f64,
    pub tau_td: f64,
    pub n_above_sd: usize,
    pub n_above_td: usize,
    pub acc_src_sd: f64,
    pub acc_src_td: f64,
    pub acc_tgt_sd: f64,
    pub acc_tgt_td: f64,
    pub acc_tgt_ens: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    fn fields(&self) -> [String; 18] {
        [
            self.epoch.to_string(),
            self.fm_sd.to_string(),
            self.fm_td.to_string(),
            self.bim_sd.to_string(),
            self.bim_td.to_string(),
            self.sp_sd.to_string(),
            self.sp_td.to_string(),
            self.cr.to_string(),
            self.tau_sd.to_string(),
            self.tau_td.to_string(),
            self.n_above_sd.to_string(),
            self.n_above_td.to_string(),
            self.acc_src_sd.to_string(),
            self.acc_src_td.to_string(),
            self.acc_tgt_sd.to_string(),
            self.acc_tgt_td.to_string(),
            self.acc_tgt_ens.to_string(),
            self.wall_ms.to_string(),
        ]
    }

    pub fn csv_line(&self) -> String {
        self.fields().join(",")
    }
}

pub fn metrics_header() -> String {
    METRICS_COLUMNS.join(",")
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = metrics_header();
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(metrics_header().as_str()) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected metrics header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != METRICS_COLUMNS.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", METRICS_COLUMNS.len(), f.len()),
            });
        }
        let perr = |col: usize| Error::Parse {
            line: lineno,
            message: format!("bad value `{}` in column {}", f[col], METRICS_COLUMNS[col]),
        };
        let fl = |col: usize| f[col].parse::<f64>().map_err(|_| perr(col));
        let int = |col: usize| f[col].parse::<usize>().map_err(|_| perr(col));
        rows.push(MetricsRow {
            epoch: int(0)?,
            fm_sd: fl(1)?,
            fm_td: fl(2)?,
            bim_sd: fl(3)?,
            bim_td: fl(4)?,
            sp_sd: fl(5)?,
            sp_td: fl(6)?,
            cr: fl(7)?,
            tau_sd: fl(8)?,
            tau_td: fl(9)?,
            n_above_sd: int(10)?,
            n_above_td: int(11)?,
            acc_src_sd: fl(12)?,
            acc_src_td: fl(13)?,
            acc_tgt_sd: fl(14)?,
            acc_tgt_td: fl(15)?,
            acc_tgt_ens: fl(16)?,
            wall_ms: f[17].parse().map_err(|_| perr(17))?,
        });
    }
    Ok(rows)
}

/// τ and gate counts of a single iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub post_warmup: bool,
    pub tau_sd: f64,
    pub tau_td: f64,
    pub n_above_sd: usize,
    pub n_above_td: usize,
    pub n_below_sd: usize,
    pub n_below_td: usize,
}

pub fn thresholds_to_csv(records: &[ThresholdRecord]) -> String {
    let mut out =
        String::from("iteration,epoch,post_warmup,tau_sd,tau_td,n_above_sd,n_above_td,n_below_sd,n_below_td\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.epoch,
            u8::from(r.post_warmup),
            r.tau_sd,
            r.tau_td,
            r.n_above_sd,
            r.n_above_td,
            r.n_below_sd,
            r.n_below_td
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_rows_three_lines() {
        let rows = vec![
            MetricsRow {
                epoch: 1,
                ..Default::default()
            },
            MetricsRow {
                epoch: 2,
                ..Default::default()
            },
        ];
        let csv = metrics_to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,fm_sd,fm_td,bim_sd,bim_td,sp_sd,sp_td,cr,tau_sd,tau_td,n_above_sd,n_above_td,acc_src_sd,acc_src_td,acc_tgt_sd,acc_tgt_td,acc_tgt_ens,wall_ms\n"));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 14), counts in prop::collection::vec(0usize..10_000, 3)) {
            let row = MetricsRow {
                epoch: counts[0],
                fm_sd: vals[0], fm_td: vals[1], bim_sd: vals[2], bim_td: vals[3], sp_sd: vals[4], sp_td: vals[5],
                cr: vals[6], tau_sd: vals[7], tau_td: vals[8],
                n_above_sd: counts[1], n_above_td: counts[2],
                acc_src_sd: vals[9], acc_src_td: vals[10], acc_tgt_sd: vals[11], acc_tgt_td: vals[12], acc_tgt_ens: vals[13],
                wall_ms: 17,
            };
            let back = metrics_from_csv(&metrics_to_csv(std::slice::from_ref(&row))).unwrap();
            prop_assert_eq!(back, vec![row]);
        }
    }
}
