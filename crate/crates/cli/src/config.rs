//! The resolved run configuration. Precedence: command-line flag, then
//! `--config` file, then built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bytegram::experiments::LevelConfig;
use bytegram::learners::{LearnerConfig, LearnerKind, Metric};
use bytegram::ngram::Budgets;

use crate::cli::{CorpusArgs, MetricArg, Precision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// A root with `benign/` and one subdirectory per family.
    Directory { path: PathBuf },
    /// A synthetic spec, generated in memory.
    SyntheticSpec { path: PathBuf },
    /// Dictionaries written by `extract`.
    Dictionaries { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<CorpusSource>,
    pub n: usize,
    pub m: usize,
    pub budgets: Budgets,
    pub learners: Vec<LearnerConfig>,
    /// Empty means every level.
    pub levels: Vec<usize>,
    pub max_models: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub n_folds: usize,
    pub select_per_fold: bool,
    pub depths: Vec<usize>,
    pub alphas: Vec<f64>,
    pub n_values: Vec<usize>,
    pub precision: Precision,
}

/// Flag values; `None` leaves the config file or default in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub levels: Option<Vec<usize>>,
    pub max_models: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub folds: Option<usize>,
    pub select_per_fold: bool,
    pub exact: bool,
    pub k_malware: Option<usize>,
    pub k_benign: Option<usize>,
    pub k_family: Option<usize>,
    pub depths: Option<Vec<usize>>,
    pub alphas: Option<Vec<f64>>,
    pub ns: Option<Vec<usize>>,
    pub precision: Option<Precision>,
    pub learners: Option<Vec<String>>,
    pub knn_k: Option<usize>,
    pub knn_metric: Option<MetricArg>,
    pub svm_c: Option<f64>,
    pub rf_trees: Option<usize>,
    pub rf_depth: Option<usize>,
    pub mlp_hidden: Option<Vec<usize>>,
    pub mlp_alpha: Option<f64>,
    pub mlp_max_iter: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            n: 2,
            m: 20,
            budgets: Budgets::default(),
            learners: LearnerConfig::defaults(),
            levels: Vec::new(),
            max_models: 100,
            seed: 1,
            jobs: None,
            n_folds: 5,
            select_per_fold: false,
            depths: bytegram::experiments::sweeps::DEFAULT_RF_DEPTHS.to_vec(),
            alphas: bytegram::experiments::sweeps::DEFAULT_MLP_ALPHAS.to_vec(),
            n_values: vec![2, 4, 6],
            precision: Precision::F64,
        }
    }
}

/// Write `config.used` into `out`: the command name, tool version and the
/// settings it ran with.
pub fn write_used<S: Serialize>(out: &Path, command: &str, settings: &S) -> Result<()> {
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    bytegram::write_atomic(&out.join("config.used"), text.as_bytes())?;
    Ok(())
}

/// A bare config object, or a `config.used` from an earlier run.
fn load_file(path: &Path) -> Result<RunConfig> {
    let invalid = || format!("invalid config file {}", path.display());
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(invalid)?;
    let value = match value {
        serde_json::Value::Object(mut doc) if doc.contains_key("command") => {
            doc.remove("settings").with_context(invalid)?
        }
        other => other,
    };
    serde_json::from_value(value).with_context(invalid)
}

pub fn corpus_from_args(args: &CorpusArgs) -> Result<Option<CorpusSource>> {
    let given = [&args.corpus, &args.synth_spec, &args.dicts]
        .iter()
        .filter(|o| o.is_some())
        .count();
    if given > 1 {
        bail!("give at most one of --corpus, --synth-spec, --dicts");
    }
    Ok(if let Some(p) = &args.corpus {
        Some(CorpusSource::Directory { path: p.clone() })
    } else if let Some(p) = &args.synth_spec {
        Some(CorpusSource::SyntheticSpec { path: p.clone() })
    } else {
        args.dicts.as_ref().map(|p| CorpusSource::Dictionaries { path: p.clone() })
    })
}

fn apply_learner_flags(cfg: &mut RunConfig, args: &Overrides) -> Result<()> {
    if let Some(list) = &args.learners {
        let mut chosen = Vec::new();
        for name in list {
            let kind = LearnerKind::parse(name)
                .with_context(|| format!("unknown learner {name:?} (expected knn, svm, rf or mlp)"))?;
            let existing = cfg.learners.iter().find(|l| l.kind() == kind).cloned();
            chosen.push(existing.unwrap_or_else(|| LearnerConfig::default_for(kind)));
        }
        cfg.learners = chosen;
    }
    for l in &mut cfg.learners {
        match l {
            LearnerConfig::Knn { k, metric } => {
                if let Some(v) = args.knn_k {
                    *k = v;
                }
                if let Some(v) = args.knn_metric {
                    *metric = v.into();
                }
            }
            LearnerConfig::LinearSvm(c) => {
                if let Some(v) = args.svm_c {
                    c.c = v;
                }
            }
            LearnerConfig::RandomForest(c) => {
                if let Some(v) = args.rf_trees {
                    c.n_trees = v;
                }
                if let Some(v) = args.rf_depth {
                    c.max_depth = Some(v);
                }
            }
            LearnerConfig::Mlp(c) => {
                if let Some(v) = &args.mlp_hidden {
                    c.hidden = v.clone();
                }
                if let Some(v) = args.mlp_alpha {
                    c.alpha = v;
                }
                if let Some(v) = args.mlp_max_iter {
                    c.max_iter = v;
                }
            }
        }
    }
    Ok(())
}

/// Merge defaults, the optional config file, and flags; then validate.
pub fn resolve(args: &Overrides, corpus: &CorpusArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = corpus_from_args(corpus)? {
        cfg.corpus = Some(c);
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag.clone() { cfg.$field = v; })*
        };
    }
    set!(n => n, m => m, levels => levels, max_models => max_models, seed => seed, folds => n_folds,
         depths => depths, alphas => alphas, ns => n_values);
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    if args.select_per_fold {
        cfg.select_per_fold = true;
    }
    if args.exact {
        cfg.budgets = Budgets::exact();
    }
    if let Some(k) = args.k_malware {
        cfg.budgets.k_malware = Some(k);
    }
    if let Some(k) = args.k_benign {
        cfg.budgets.k_benign = Some(k);
    }
    if let Some(k) = args.k_family {
        cfg.budgets.k_family = Some(k);
    }
    apply_learner_flags(&mut cfg, args)?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.n == 0 {
        bail!("n must be at least 1");
    }
    if cfg.n_values.contains(&0) {
        bail!("every n in --ns must be at least 1");
    }
    if cfg.m == 0 {
        bail!("m must be at least 1");
    }
    if cfg.max_models == 0 {
        bail!("max-models must be at least 1");
    }
    if cfg.n_folds < 2 {
        bail!("need at least 2 folds");
    }
    if cfg.jobs == Some(0) {
        bail!("jobs must be at least 1");
    }
    if cfg.levels.contains(&0) {
        bail!("levels start at 1");
    }
    if cfg.depths.contains(&0) {
        bail!("depths must be at least 1");
    }
    if cfg.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        bail!("alphas must be finite and non-negative");
    }
    if cfg.learners.is_empty() {
        bail!("no learners selected");
    }
    cfg.budgets.validate()?;
    for l in &cfg.learners {
        l.validate()?;
    }
    Ok(())
}

impl RunConfig {
    pub fn level_config(&self, level: usize) -> LevelConfig {
        LevelConfig {
            level,
            max_models: self.max_models,
            seed: self.seed,
            m: self.m,
            learners: self.learners.clone(),
            n_folds: self.n_folds,
            select_per_fold: self.select_per_fold,
        }
    }

    /// The configured levels, or 1..=families when none were given.
    pub fn levels_for(&self, families: usize) -> Result<Vec<usize>> {
        if self.levels.is_empty() {
            return Ok((1..=families).collect());
        }
        if let Some(l) = self.levels.iter().find(|&&l| l > families) {
            bail!("level {l} exceeds the corpus's {families} families");
        }
        Ok(self.levels.clone())
    }
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Manhattan => Metric::Manhattan,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}
