//! Aggregation of finished runs into plot-ready CSV tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use helm_core::io::write_atomic;
use helm_core::metrics::average_ranks;
use helm_core::training::Variant;
use helm_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{RunSummary, SUMMARY};

pub const AGGREGATE: &str = "aggregate.csv";
pub const RANKS: &str = "ranks.csv";
pub const LEARNING_CURVE: &str = "learning_curve.csv";

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub ratio: f64,
    pub runs: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub ranking_loss_mean: f64,
    pub ranking_loss_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub variant: Variant,
    pub average_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub ratio: f64,
    pub variant: Variant,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub aggregate: Vec<AggregateRow>,
    /// Empty when no ratio has a result for every variant.
    pub ranks: Vec<RankRow>,
    pub curve: Vec<CurveRow>,
}

/// Run directories matched by `patterns` that hold a summary.
pub fn find_runs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for p in patterns {
        let paths = glob::glob(p).map_err(|e| Error::InvalidConfig(format!("bad glob '{p}': {e}")))?;
        for path in paths.flatten() {
            if path.join(SUMMARY).is_file() {
                dirs.push(path);
            }
        }
    }
    dirs.sort();
    dirs.dedup();
    if dirs.is_empty() {
        return Err(Error::Empty(format!("no run directories match {patterns:?}")));
    }
    Ok(dirs)
}

pub fn load_summaries(dirs: &[PathBuf]) -> Result<Vec<RunSummary>> {
    dirs.par_iter()
        .map(|d| Ok(serde_json::from_slice(&std::fs::read(d.join(SUMMARY))?)?))
        .collect()
}

fn ratio_key(r: f64) -> u64 {
    (r * 1e6).round() as u64
}

pub fn build(summaries: &[RunSummary]) -> Result<Report> {
    let mut groups: BTreeMap<(u64, Variant), Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.test.is_some()) {
        groups.entry((ratio_key(s.ratio), s.variant)).or_default().push(s);
    }
    if groups.is_empty() {
        return Err(Error::Empty("no run has test metrics".into()));
    }
    let mut report = Report::default();
    for runs in groups.values() {
        let test = |f: fn(&helm_core::training::EvalReport) -> f64| -> Vec<f64> {
            runs.iter().filter_map(|r| r.test.as_ref()).map(f).collect()
        };
        let (am, asd) = mean_std(&test(|t| t.auprc));
        let (rm, rsd) = mean_std(&test(|t| t.ranking_loss));
        let first = runs[0];
        report.aggregate.push(AggregateRow {
            variant: first.variant,
            ratio: first.ratio,
            runs: runs.len(),
            auprc_mean: am,
            auprc_std: asd,
            ranking_loss_mean: rm,
            ranking_loss_std: rsd,
        });
        report.curve.push(CurveRow {
            ratio: first.ratio,
            variant: first.variant,
            mean: am,
            std: asd,
        });
    }

    let variants: Vec<Variant> = Variant::ALL
        .iter()
        .copied()
        .filter(|v| report.aggregate.iter().any(|a| a.variant == *v))
        .collect();
    let mut ratios: Vec<u64> = report.aggregate.iter().map(|a| ratio_key(a.ratio)).collect();
    ratios.dedup();
    let cell = |v: Variant, r: u64| {
        report
            .aggregate
            .iter()
            .find(|a| a.variant == v && ratio_key(a.ratio) == r)
            .map(|a| a.auprc_mean)
    };
    let complete: Vec<u64> = ratios
        .into_iter()
        .filter(|&r| variants.iter().all(|&v| cell(v, r).is_some()))
        .collect();
    if !complete.is_empty() {
        let table: Vec<Vec<f64>> = variants
            .iter()
            .map(|&v| complete.iter().filter_map(|&r| cell(v, r)).collect())
            .collect();
        let ranks = average_ranks(&table, true)?;
        report.ranks = variants
            .iter()
            .zip(ranks)
            .map(|(&variant, average_rank)| RankRow { variant, average_rank })
            .collect();
    } else {
        log::warn!("no ratio has a result for every variant; skipping the rank table");
    }
    Ok(report)
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Write the three tables into `out`. Returns the written paths.
pub fn write(report: &Report, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = out.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put(AGGREGATE, csv_bytes(&report.aggregate)?)?;
    if !report.ranks.is_empty() {
        put(RANKS, csv_bytes(&report.ranks)?)?;
    }
    put(LEARNING_CURVE, csv_bytes(&report.curve)?)?;
    Ok(written)
}
