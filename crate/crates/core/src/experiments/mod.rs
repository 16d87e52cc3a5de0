//! The level-N driver: for each sampled combination of N malware families,
//! build features, cross-validate every learner against the benign pool, and
//! aggregate the pooled balanced accuracies per learner.
//!
//! Seeds, given the master seed `s`:
//!
//! * combination sampling at level N: `derive_seed(s, [tag("combinations"), N])`
//! * combination with lexicographic rank r: `c = derive_seed(s, [N, r])`
//! * its fold plan: `derive_seed(c, [tag("folds")])`
//! * learner L on fold f: `derive_seed(derive_seed(c, [tag(L)]), [f])`
//!
//! None of these depend on n, m, the learner list or execution order.

pub mod combos;
pub mod output;
pub mod sweeps;

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{
    cross_validate, cross_validate_with, distribution_stats, roc_auc, stratified_folds,
    CvResult, DistributionStats, OutcomeRow, RocCurve, DEFAULT_FOLDS,
};
use crate::features::{select_features, vectorize, FeatureMatrix, DEFAULT_FEATURE_COUNT};
use crate::learners::LearnerConfig;
use crate::ngram::{build_family_dict, build_sample_dicts, Budgets, NGramDictionary};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, tag};

pub use combos::{binomial, enumerate_combinations, models_to_run, sample_combinations};
pub use sweeps::{run_ngram_comparison, sweep_mlp_alpha, sweep_rf_depth, NgramCurves, SweepCell, SweepTable};

pub const DEFAULT_MAX_MODELS: usize = 100;

/// Dictionaries for one n: per-sample, per-family, and the benign pool.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    n: usize,
    budgets: Budgets,
    families: Vec<String>,
    family_samples: Vec<Vec<(String, NGramDictionary)>>,
    family_dicts: Vec<NGramDictionary>,
    benign: Vec<(String, NGramDictionary)>,
}

impl PreparedCorpus {
    /// Count every sample and build the family dictionaries. Families are the
    /// malware family names in sorted order.
    pub fn build(samples: &[Sample], n: usize, budgets: &Budgets) -> Result<PreparedCorpus> {
        let dicts = build_sample_dicts(samples, n, budgets)?;
        let mut by_family: BTreeMap<String, Vec<(String, NGramDictionary)>> = BTreeMap::new();
        let mut benign = Vec::new();
        for s in samples {
            let d = dicts[s.id()].clone();
            match s.label() {
                Label::Malware => by_family
                    .entry(s.family().to_string())
                    .or_default()
                    .push((s.id().to_string(), d)),
                Label::Benign => benign.push((s.id().to_string(), d)),
            }
        }
        Self::from_sample_dicts(n, *budgets, by_family.into_iter().collect(), benign)
    }

    /// Assemble from already counted (and budgeted) sample dictionaries.
    pub fn from_sample_dicts(
        n: usize,
        budgets: Budgets,
        families: Vec<(String, Vec<(String, NGramDictionary)>)>,
        mut benign: Vec<(String, NGramDictionary)>,
    ) -> Result<PreparedCorpus> {
        if families.is_empty() {
            return Err(Error::config("corpus has no malware families"));
        }
        if benign.is_empty() {
            return Err(Error::config("corpus has no benign samples"));
        }
        let mut families = families;
        families.sort_by(|a, b| a.0.cmp(&b.0));
        for w in families.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::config(format!("family {} listed twice", w[0].0)));
            }
        }
        let mut names = Vec::new();
        let mut family_samples = Vec::new();
        for (name, mut members) in families {
            if members.is_empty() {
                return Err(Error::config(format!("family {name} has no samples")));
            }
            members.sort_by(|a, b| a.0.cmp(&b.0));
            names.push(name);
            family_samples.push(members);
        }
        benign.sort_by(|a, b| a.0.cmp(&b.0));
        for d in family_samples.iter().flatten().chain(&benign) {
            if d.1.n() != n {
                return Err(Error::contract(format!("dictionary {} has n={}, expected {n}", d.0, d.1.n())));
            }
        }
        let family_dicts = family_samples
            .par_iter()
            .map(|members| build_family_dict(n, members.iter().map(|m| &m.1), budgets.k_family))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedCorpus {
            n,
            budgets,
            families: names,
            family_samples,
            family_dicts,
            benign,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn budgets(&self) -> &Budgets {
        &self.budgets
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn family_samples(&self, family: usize) -> &[(String, NGramDictionary)] {
        &self.family_samples[family]
    }

    pub fn family_dict(&self, family: usize) -> &NGramDictionary {
        &self.family_dicts[family]
    }

    pub fn benign(&self) -> &[(String, NGramDictionary)] {
        &self.benign
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub level: usize,
    pub max_models: usize,
    pub seed: u64,
    pub m: usize,
    pub learners: Vec<LearnerConfig>,
    pub n_folds: usize,
    /// Select features from each fold's training rows instead of from all rows.
    pub select_per_fold: bool,
}

impl LevelConfig {
    pub fn new(level: usize, seed: u64) -> LevelConfig {
        LevelConfig {
            level,
            max_models: DEFAULT_MAX_MODELS,
            seed,
            m: DEFAULT_FEATURE_COUNT,
            learners: LearnerConfig::defaults(),
            n_folds: DEFAULT_FOLDS,
            select_per_fold: false,
        }
    }

    pub fn at_level(&self, level: usize) -> LevelConfig {
        LevelConfig {
            level,
            ..self.clone()
        }
    }

    pub fn validate(&self, family_count: usize) -> Result<()> {
        if self.level == 0 || self.level > family_count {
            return Err(Error::config(format!(
                "level {} is outside 1..={family_count}",
                self.level
            )));
        }
        if self.max_models == 0 {
            return Err(Error::config("max_models must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::config("feature count m must be at least 1"));
        }
        if self.learners.is_empty() {
            return Err(Error::config("no learners configured"));
        }
        let mut names: Vec<&str> = self.learners.iter().map(|l| l.kind().name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("each learner may appear only once per run"));
        }
        for l in &self.learners {
            l.validate()?;
        }
        if self.n_folds < 2 {
            return Err(Error::config("need at least 2 folds"));
        }
        Ok(())
    }
}

pub fn sampling_seed(master: u64, level: usize) -> u64 {
    derive_seed(master, &[tag("combinations"), level as u64])
}

pub fn combination_seed(master: u64, level: usize, rank: usize) -> u64 {
    derive_seed(master, &[level as u64, rank as u64])
}

/// A sampled combination: its lexicographic rank and family indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Combination {
    pub rank: usize,
    pub families: Vec<usize>,
}

/// The combinations a level runs, in sampled order.
pub fn level_combinations(family_count: usize, level: usize, max_models: usize, seed: u64) -> Result<Vec<Combination>> {
    let all: Vec<Combination> = enumerate_combinations(family_count, level)?
        .into_iter()
        .enumerate()
        .map(|(rank, families)| Combination { rank, families })
        .collect();
    sample_combinations(&all, max_models, sampling_seed(seed, level))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerRecord {
    pub learner: String,
    /// One row per fold, then the pooled row.
    pub rows: Vec<OutcomeRow>,
    pub pooled_bal_acc: f64,
    pub fold_mean_bal_acc: f64,
    pub auc: f64,
    pub roc: Option<RocCurve<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComboRecord {
    pub combo_id: usize,
    pub families: Vec<String>,
    pub seed: u64,
    pub learners: Vec<LearnerRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComboFailure {
    pub combo_id: usize,
    pub families: Vec<String>,
    /// `None` when the combination failed before any learner ran.
    pub learner: Option<String>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub learner: String,
    pub high: f64,
    pub avg: f64,
    pub low: f64,
    pub count: usize,
    pub stats: DistributionStats<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelResult {
    pub level: usize,
    pub family_count: usize,
    pub models_to_run: usize,
    pub learners: Vec<String>,
    /// Completed combinations ordered by combo id.
    pub records: Vec<ComboRecord>,
    pub failures: Vec<ComboFailure>,
}

/// high/avg/low over one learner's values, taken in record order.
pub fn aggregate(learner: &str, values: &[f64]) -> Option<Aggregate> {
    let stats = distribution_stats(values).ok()?;
    Some(Aggregate {
        learner: learner.to_string(),
        high: stats.max,
        avg: stats.mean,
        low: stats.min,
        count: values.len(),
        stats,
    })
}

impl LevelResult {
    fn values(&self, learner: &str, pick: impl Fn(&LearnerRecord) -> f64) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.learners.iter().filter(|l| l.learner == learner).map(&pick))
            .collect()
    }

    pub fn pooled_values(&self, learner: &str) -> Vec<f64> {
        self.values(learner, |l| l.pooled_bal_acc)
    }

    /// Aggregates of pooled balanced accuracy, one per learner that completed
    /// at least one combination.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.learners
            .iter()
            .filter_map(|l| aggregate(l, &self.pooled_values(l)))
            .collect()
    }

    /// Aggregates of the per-combination fold-mean balanced accuracy.
    pub fn fold_mean_aggregates(&self) -> Vec<Aggregate> {
        self.learners
            .iter()
            .filter_map(|l| aggregate(l, &self.values(l, |r| r.fold_mean_bal_acc)))
            .collect()
    }

    /// Completed combinations for `learner`, out of `models_to_run`.
    pub fn completed(&self, learner: &str) -> usize {
        self.pooled_values(learner).len()
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.records.len() == self.models_to_run
    }
}

type Split<T> = (FeatureMatrix<T>, FeatureMatrix<T>);

fn per_fold_matrices<T: Scalar>(
    corpus: &PreparedCorpus,
    combo: &Combination,
    names: &[String],
    rows: &[(&str, &NGramDictionary, Label, Option<usize>)],
    plan: &crate::evaluation::FoldPlan,
    m: usize,
) -> Result<Vec<Split<T>>> {
    (0..plan.n_folds())
        .map(|f| {
            let train = plan.train_rows(f);
            let family_dicts = combo
                .families
                .iter()
                .map(|&fam| {
                    let members = train
                        .iter()
                        .filter(|&&r| rows[r].3 == Some(fam))
                        .map(|&r| rows[r].1);
                    build_family_dict(corpus.n, members, corpus.budgets.k_family)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&NGramDictionary> = family_dicts.iter().collect();
            let fs = select_features(&refs, m, names.to_vec())?;
            let build = |idx: &[usize]| -> Result<FeatureMatrix<T>> {
                FeatureMatrix::from_parts(
                    Some(fs.clone()),
                    idx.iter().map(|&r| vectorize(rows[r].1, &fs)).collect::<Result<_>>()?,
                    idx.iter().map(|&r| rows[r].2).collect(),
                    idx.iter().map(|&r| rows[r].0.to_string()).collect(),
                )
            };
            Ok((build(&train)?, build(&plan.test_rows(f))?))
        })
        .collect()
}

fn learner_record<T: Scalar>(
    level: usize,
    combo_id: usize,
    name: &str,
    cv: &CvResult<T>,
    keep_roc: bool,
) -> Result<LearnerRecord> {
    let mut rows = cv
        .folds
        .iter()
        .enumerate()
        .map(|(f, o)| OutcomeRow::new(level, combo_id, name, f.to_string(), o))
        .collect::<Result<Vec<_>>>()?;
    rows.push(OutcomeRow::new(level, combo_id, name, "pooled".into(), &cv.pooled)?);
    let scored: Vec<(Label, f64)> = cv.pooled.scores.iter().map(|&(l, s)| (l, s.as_f64())).collect();
    let roc = roc_auc(&scored)?;
    Ok(LearnerRecord {
        learner: name.to_string(),
        pooled_bal_acc: cv.pooled.balanced_accuracy()?.as_f64(),
        fold_mean_bal_acc: cv.fold_mean_balanced_accuracy()?.as_f64(),
        auc: roc.auc,
        roc: keep_roc.then_some(roc),
        rows,
    })
}

/// Run one combination: features, folds, and every learner. Learner failures
/// are returned alongside the record rather than aborting the others.
pub fn run_combination<T: Scalar>(
    cfg: &LevelConfig,
    corpus: &PreparedCorpus,
    combo: &Combination,
) -> Result<(ComboRecord, Vec<ComboFailure>)> {
    let names: Vec<String> = combo.families.iter().map(|&f| corpus.families[f].clone()).collect();
    let seed = combination_seed(cfg.seed, cfg.level, combo.rank);

    // malware rows sorted by id, then benign rows sorted by id
    let mut rows: Vec<(&str, &NGramDictionary, Label, Option<usize>)> = combo
        .families
        .iter()
        .flat_map(|&f| {
            corpus.family_samples[f]
                .iter()
                .map(move |(id, d)| (id.as_str(), d, Label::Malware, Some(f)))
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    rows.extend(corpus.benign.iter().map(|(id, d)| (id.as_str(), d, Label::Benign, None)));
    let labels: Vec<Label> = rows.iter().map(|r| r.2).collect();
    let plan = stratified_folds(&labels, cfg.n_folds, derive_seed(seed, &[tag("folds")]))?;

    enum Prepared<T> {
        Whole(FeatureMatrix<T>),
        PerFold(Vec<Split<T>>),
    }
    let prepared = if cfg.select_per_fold {
        Prepared::PerFold(per_fold_matrices::<T>(corpus, combo, &names, &rows, &plan, cfg.m)?)
    } else {
        let dicts: Vec<&NGramDictionary> = combo.families.iter().map(|&f| &corpus.family_dicts[f]).collect();
        let fs = select_features(&dicts, cfg.m, names.clone())?;
        let matrix = FeatureMatrix::from_parts(
            Some(fs.clone()),
            rows.par_iter().map(|r| vectorize(r.1, &fs)).collect::<Result<_>>()?,
            labels,
            rows.iter().map(|r| r.0.to_string()).collect(),
        )?;
        Prepared::<T>::Whole(matrix)
    };

    let keep_roc = cfg.level == 1;
    let outcomes: Vec<(String, Result<LearnerRecord>)> = cfg
        .learners
        .par_iter()
        .map(|lc| {
            let name = lc.kind().name();
            let lseed = derive_seed(seed, &[tag(name)]);
            let cv = match &prepared {
                Prepared::Whole(m) => cross_validate(m, lc, &plan, lseed),
                Prepared::PerFold(splits) => cross_validate_with(&plan, lc, lseed, |f, _, _| Ok(splits[f].clone())),
            };
            let rec = cv.and_then(|cv| learner_record(cfg.level, combo.rank, name, &cv, keep_roc));
            (name.to_string(), rec)
        })
        .collect();

    let mut record = ComboRecord {
        combo_id: combo.rank,
        families: names.clone(),
        seed,
        learners: Vec::new(),
    };
    let mut failures = Vec::new();
    for (name, r) in outcomes {
        match r {
            Ok(rec) => record.learners.push(rec),
            Err(e) => {
                warn!("level {} combo {} {name}: {e}", cfg.level, combo.rank);
                failures.push(ComboFailure {
                    combo_id: combo.rank,
                    families: names.clone(),
                    learner: Some(name),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok((record, failures))
}

/// Run every sampled combination of one level.
pub fn run_level<T: Scalar>(cfg: &LevelConfig, corpus: &PreparedCorpus) -> Result<LevelResult> {
    let f = corpus.family_count();
    cfg.validate(f)?;
    let combos = level_combinations(f, cfg.level, cfg.max_models, cfg.seed)?;
    info!("level {}: {} of {} combinations", cfg.level, combos.len(), binomial(f, cfg.level));
    let results: Vec<(Combination, Result<(ComboRecord, Vec<ComboFailure>)>)> = combos
        .into_par_iter()
        .map(|c| {
            let r = run_combination::<T>(cfg, corpus, &c);
            (c, r)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in results {
        match r {
            Ok((rec, fails)) => {
                failures.extend(fails);
                records.push(rec);
            }
            Err(e) => {
                warn!("level {} combo {}: {e}", cfg.level, c.rank);
                failures.push(ComboFailure {
                    combo_id: c.rank,
                    families: c.families.iter().map(|&i| corpus.families[i].clone()).collect(),
                    learner: None,
                    error: e.to_string(),
                });
            }
        }
    }
    records.sort_by_key(|r| r.combo_id);
    failures.sort_by(|a, b| (a.combo_id, &a.learner).cmp(&(b.combo_id, &b.learner)));
    Ok(LevelResult {
        level: cfg.level,
        family_count: f,
        models_to_run: models_to_run(f, cfg.level, cfg.max_models)?,
        learners: cfg.learners.iter().map(|l| l.kind().name().to_string()).collect(),
        records,
        failures,
    })
}

/// Run each level in turn.
pub fn run_levels<T: Scalar>(base: &LevelConfig, levels: &[usize], corpus: &PreparedCorpus) -> Result<Vec<LevelResult>> {
    levels.iter().map(|&l| run_level::<T>(&base.at_level(l), corpus)).collect()
}
