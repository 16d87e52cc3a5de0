//! Hyperparameter sweeps and the n-gram length comparison.

use serde::Serialize;

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::learners::{ForestConfig, LearnerConfig, MlpConfig};
use crate::ngram::Budgets;
use crate::scalar::Scalar;

use super::{run_level, LevelConfig, LevelResult, PreparedCorpus};

pub const DEFAULT_SWEEP_LEVELS: [usize; 5] = [1, 5, 10, 15, 20];
pub const DEFAULT_RF_DEPTHS: [usize; 5] = [5, 10, 15, 20, 25];
pub const DEFAULT_MLP_ALPHAS: [f64; 7] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub level: usize,
    pub value: f64,
    pub high: Option<f64>,
    pub avg: Option<f64>,
    pub low: Option<f64>,
    pub count: usize,
}

/// One cell per (level, parameter value), levels outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    /// Column name of the swept parameter, e.g. `depth`.
    pub parameter: String,
    pub cells: Vec<SweepCell>,
}

fn sweep<T: Scalar, P: Copy>(
    base: &LevelConfig,
    corpus: &PreparedCorpus,
    levels: &[usize],
    values: &[P],
    parameter: &str,
    learner: impl Fn(P) -> LearnerConfig,
    as_f64: impl Fn(P) -> f64,
) -> Result<SweepTable> {
    if levels.is_empty() || values.is_empty() {
        return Err(Error::config(format!("{parameter} sweep needs at least one level and one value")));
    }
    let mut cells = Vec::new();
    for &level in levels {
        for &v in values {
            let cfg = LevelConfig {
                level,
                learners: vec![learner(v)],
                ..base.clone()
            };
            let result = run_level::<T>(&cfg, corpus)?;
            let agg = result.aggregates().into_iter().next();
            cells.push(SweepCell {
                level,
                value: as_f64(v),
                high: agg.as_ref().map(|a| a.high),
                avg: agg.as_ref().map(|a| a.avg),
                low: agg.as_ref().map(|a| a.low),
                count: agg.map_or(0, |a| a.count),
            });
        }
    }
    Ok(SweepTable {
        parameter: parameter.to_string(),
        cells,
    })
}

/// Random forest only, at every (level, max depth) pair. `forest` supplies
/// the non-depth hyperparameters.
pub fn sweep_rf_depth<T: Scalar>(
    base: &LevelConfig,
    corpus: &PreparedCorpus,
    levels: &[usize],
    depths: &[usize],
    forest: &ForestConfig,
) -> Result<SweepTable> {
    sweep::<T, _>(
        base,
        corpus,
        levels,
        depths,
        "depth",
        |d| {
            LearnerConfig::RandomForest(ForestConfig {
                max_depth: Some(d),
                ..forest.clone()
            })
        },
        |d| d as f64,
    )
}

/// MLP only, at every (level, α) pair.
pub fn sweep_mlp_alpha<T: Scalar>(
    base: &LevelConfig,
    corpus: &PreparedCorpus,
    levels: &[usize],
    alphas: &[f64],
    mlp: &MlpConfig,
) -> Result<SweepTable> {
    sweep::<T, _>(
        base,
        corpus,
        levels,
        alphas,
        "alpha",
        |a| LearnerConfig::Mlp(MlpConfig { alpha: a, ..mlp.clone() }),
        |a| a,
    )
}

/// Level results for one n-gram length.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramCurves {
    pub n: usize,
    pub levels: Vec<LevelResult>,
}

/// Rebuild the dictionaries for each n and rerun the same levels. Sampling
/// seeds do not involve n, so every n sees the same family sets.
pub fn run_ngram_comparison<T: Scalar>(
    base: &LevelConfig,
    samples: &[Sample],
    budgets: &Budgets,
    n_values: &[usize],
    levels: &[usize],
) -> Result<Vec<NgramCurves>> {
    if n_values.is_empty() {
        return Err(Error::config("n-gram comparison needs at least one n"));
    }
    n_values
        .iter()
        .map(|&n| {
            let corpus = PreparedCorpus::build(samples, n, budgets)?;
            Ok(NgramCurves {
                n,
                levels: super::run_levels::<T>(base, levels, &corpus)?,
            })
        })
        .collect()
}
