//! Result files. Every file is rendered in memory and then written with
//! [`write_atomic`](crate::write_atomic), so an interrupted run never leaves a
//! truncated CSV behind.
//!
//! | file                               | columns                                               |
//! |------------------------------------|-------------------------------------------------------|
//! | `level_NN.csv`                     | `level,combo_id,learner,fold,TP,TN,FP,FN,acc,bal_acc` |
//! | `level_NN_combos.csv`              | `level,combo_id,families,seed`                        |
//! | `level_NN_failures.csv`            | `level,combo_id,families,learner,error`               |
//! | `summary.csv`                      | `level,learner,high,avg,low,count`                    |
//! | `summary_fold_mean.csv`            | same, over per-combination fold means                 |
//! | `roc/level_01_combo_CCCC_<l>.csv`  | `# auc=` line, then `fpr,tpr`                         |
//! | `<sweep>.csv`                      | `level,<parameter>,high,avg,low,count`                |
//! | `ngram_comparison.csv`             | `n,level,learner,high,avg,low,count`                  |

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::evaluation::{write_outcome_rows, write_roc_csv, OutcomeRow};
use crate::write_atomic;

use super::{Aggregate, LevelResult, NgramCurves, SweepTable};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FOLD_MEAN_SUMMARY_FILE: &str = "summary_fold_mean.csv";
pub const NGRAM_COMPARISON_FILE: &str = "ngram_comparison.csv";
pub const RF_DEPTH_FILE: &str = "rf_depth.csv";
pub const MLP_ALPHA_FILE: &str = "mlp_alpha.csv";

/// Separator between family names in the combos CSV.
pub const FAMILY_SEPARATOR: char = ';';

pub fn level_file(level: usize) -> String {
    format!("level_{level:02}.csv")
}

pub fn combos_file(level: usize) -> String {
    format!("level_{level:02}_combos.csv")
}

pub fn failures_file(level: usize) -> String {
    format!("level_{level:02}_failures.csv")
}

fn csv_bytes<S: Serialize>(header: &[&str], rows: impl IntoIterator<Item = S>) -> Result<Vec<u8>> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wr.write_record(header)?;
    for r in rows {
        wr.serialize(r)?;
    }
    Ok(wr.into_inner().map_err(|e| e.into_error())?)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    level: usize,
    learner: &'a str,
    high: Option<f64>,
    avg: Option<f64>,
    low: Option<f64>,
    count: usize,
}

fn summary_rows<'a>(level: usize, learners: &'a [String], aggs: &'a [Aggregate]) -> Vec<SummaryRow<'a>> {
    learners
        .iter()
        .map(|l| {
            let a = aggs.iter().find(|a| &a.learner == l);
            SummaryRow {
                level,
                learner: l,
                high: a.map(|a| a.high),
                avg: a.map(|a| a.avg),
                low: a.map(|a| a.low),
                count: a.map_or(0, |a| a.count),
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 6] = ["level", "learner", "high", "avg", "low", "count"];

pub fn summary_csv(results: &[LevelResult]) -> Result<Vec<u8>> {
    let aggs: Vec<Vec<Aggregate>> = results.iter().map(|r| r.aggregates()).collect();
    csv_bytes(
        &SUMMARY_HEADER,
        results
            .iter()
            .zip(&aggs)
            .flat_map(|(r, a)| summary_rows(r.level, &r.learners, a)),
    )
}

pub fn fold_mean_summary_csv(results: &[LevelResult]) -> Result<Vec<u8>> {
    let aggs: Vec<Vec<Aggregate>> = results.iter().map(|r| r.fold_mean_aggregates()).collect();
    csv_bytes(
        &SUMMARY_HEADER,
        results
            .iter()
            .zip(&aggs)
            .flat_map(|(r, a)| summary_rows(r.level, &r.learners, a)),
    )
}

pub fn level_csv(result: &LevelResult) -> Result<Vec<u8>> {
    let rows: Vec<OutcomeRow> = result
        .records
        .iter()
        .flat_map(|c| c.learners.iter().flat_map(|l| l.rows.iter().cloned()))
        .collect();
    let mut buf = Vec::new();
    write_outcome_rows(&rows, &mut buf)?;
    Ok(buf)
}

fn join_families(families: &[String]) -> String {
    families.join(&FAMILY_SEPARATOR.to_string())
}

pub fn combos_csv(result: &LevelResult) -> Result<Vec<u8>> {
    csv_bytes(
        &["level", "combo_id", "families", "seed"],
        result
            .records
            .iter()
            .map(|c| (result.level, c.combo_id, join_families(&c.families), c.seed)),
    )
}

pub fn failures_csv(result: &LevelResult) -> Result<Vec<u8>> {
    csv_bytes(
        &["level", "combo_id", "families", "learner", "error"],
        result.failures.iter().map(|f| {
            (
                result.level,
                f.combo_id,
                join_families(&f.families),
                f.learner.clone().unwrap_or_default(),
                f.error.clone(),
            )
        }),
    )
}

/// Write the per-level files (and level-1 ROC curves) for one level.
pub fn write_level(result: &LevelResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put(level_file(result.level), level_csv(result)?)?;
    put(combos_file(result.level), combos_csv(result)?)?;
    put(failures_file(result.level), failures_csv(result)?)?;
    for c in &result.records {
        for l in &c.learners {
            if let Some(roc) = &l.roc {
                let mut buf = Vec::new();
                write_roc_csv(roc, &mut buf)?;
                put(
                    format!("roc/level_{:02}_combo_{:04}_{}.csv", result.level, c.combo_id, l.learner),
                    buf,
                )?;
            }
        }
    }
    Ok(written)
}

/// Per-level files for every result plus both summaries.
pub fn write_results(results: &[LevelResult], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in results {
        written.extend(write_level(r, dir)?);
    }
    for (name, bytes) in [
        (SUMMARY_FILE, summary_csv(results)?),
        (FOLD_MEAN_SUMMARY_FILE, fold_mean_summary_csv(results)?),
    ] {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
    }
    Ok(written)
}

pub fn sweep_csv(table: &SweepTable) -> Result<Vec<u8>> {
    csv_bytes(
        &["level", table.parameter.as_str(), "high", "avg", "low", "count"],
        table
            .cells
            .iter()
            .map(|c| (c.level, c.value, c.high, c.avg, c.low, c.count)),
    )
}

pub fn write_sweep(table: &SweepTable, path: &Path) -> Result<()> {
    write_atomic(path, &sweep_csv(table)?)
}

pub fn ngram_comparison_csv(curves: &[NgramCurves]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for c in curves {
        for r in &c.levels {
            for a in r.aggregates() {
                rows.push((c.n, r.level, a.learner, a.high, a.avg, a.low, a.count));
            }
        }
    }
    csv_bytes(&["n", "level", "learner", "high", "avg", "low", "count"], rows)
}

/// `n<N>/` holds each n's full level results; the comparison table sits in `dir`.
pub fn write_ngram_comparison(curves: &[NgramCurves], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for c in curves {
        written.extend(write_results(&c.levels, &dir.join(format!("n{}", c.n)))?);
    }
    let p = dir.join(NGRAM_COMPARISON_FILE);
    write_atomic(&p, &ngram_comparison_csv(curves)?)?;
    written.push(p);
    Ok(written)
}
