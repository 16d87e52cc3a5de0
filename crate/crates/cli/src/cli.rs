use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::Overrides;

/// Byte n-gram malware detection experiments.
#[derive(Parser, Debug)]
#[command(name = "bytegram", version, about, propagate_version = true)]
pub struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus: one directory per family plus benign/.
    GenSynth(GenSynthArgs),
    /// Ingest a corpus root and write its manifest and scan warnings.
    Scan(ScanArgs),
    /// Write per-sample, per-family and feature-set dictionaries.
    Extract(ExtractArgs),
    /// Evaluate every learner on the sampled combinations of one level.
    RunLevel(RunLevelArgs),
    /// Evaluate a list of levels (default: every level) and summarize.
    RunAllLevels(RunAllArgs),
    /// Random forest at each (level, max depth) pair.
    SweepRfDepth(SweepRfArgs),
    /// MLP at each (level, L2 penalty) pair.
    SweepMlpAlpha(SweepMlpArgs),
    /// Rerun the same levels for several n-gram lengths.
    CompareNgrams(CompareArgs),
    /// Render figures and a text summary from a results directory.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::Scan(_) => "scan",
            Command::Extract(_) => "extract",
            Command::RunLevel(_) => "run-level",
            Command::RunAllLevels(_) => "run-all-levels",
            Command::SweepRfDepth(_) => "sweep-rf-depth",
            Command::SweepMlpAlpha(_) => "sweep-mlp-alpha",
            Command::CompareNgrams(_) => "compare-ngrams",
            Command::Report(_) => "report",
        }
    }

    /// Input directories named on the command line, with whether `--out`
    /// may sit inside them.
    pub fn inputs(&self) -> Vec<(&PathBuf, bool)> {
        fn corpus(c: &CorpusArgs) -> Vec<(&PathBuf, bool)> {
            let mut v: Vec<(&PathBuf, bool)> = c.corpus.iter().map(|p| (p, false)).collect();
            v.extend(c.dicts.iter().map(|p| (p, true)));
            v
        }
        match self {
            Command::GenSynth(_) => Vec::new(),
            Command::Scan(a) => vec![(&a.corpus, false)],
            Command::Extract(a) => corpus(&a.corpus),
            Command::RunLevel(a) => corpus(&a.exp.corpus),
            Command::RunAllLevels(a) => corpus(&a.exp.corpus),
            Command::SweepRfDepth(a) => corpus(&a.exp.corpus),
            Command::SweepMlpAlpha(a) => corpus(&a.exp.corpus),
            Command::CompareNgrams(a) => corpus(&a.exp.corpus),
            Command::Report(a) => vec![(&a.results, true)],
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Command::GenSynth(a) => &a.out,
            Command::Scan(a) => &a.out,
            Command::Extract(a) => &a.common.out,
            Command::RunLevel(a) => &a.exp.common.out,
            Command::RunAllLevels(a) => &a.exp.common.out,
            Command::SweepRfDepth(a) => &a.exp.common.out,
            Command::SweepMlpAlpha(a) => &a.exp.common.out,
            Command::CompareNgrams(a) => &a.exp.common.out,
            Command::Report(a) => &a.out,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Euclidean,
    Manhattan,
    Cosine,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Number of malware families.
    #[arg(long, default_value_t = 20)]
    pub families: usize,
    /// Samples per family.
    #[arg(long, default_value_t = 200)]
    pub per_family: usize,
    /// Benign (background-only) samples.
    #[arg(long, default_value_t = 200)]
    pub benign: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Strength of the family bias n-grams, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Minimum sample length in bytes.
    #[arg(long, default_value_t = 8 * 1024)]
    pub min_len: usize,
    /// Maximum sample length in bytes.
    #[arg(long, default_value_t = 32 * 1024)]
    pub max_len: usize,
    /// Generator spec (JSON). Replaces every other generator flag.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Corpus root: benign/ plus one directory per family.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    /// Corpus root: benign/ plus one directory per family.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Synthetic generator spec, generated in memory.
    #[arg(long, value_name = "FILE")]
    pub synth_spec: Option<PathBuf>,
    /// Dictionaries written by `extract`.
    #[arg(long, value_name = "DIR")]
    pub dicts: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DictArgs {
    /// N-gram length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Per-sample budget for malware dictionaries.
    #[arg(long)]
    pub k_malware: Option<usize>,
    /// Per-sample budget for benign dictionaries.
    #[arg(long)]
    pub k_benign: Option<usize>,
    /// Budget for merged family dictionaries.
    #[arg(long)]
    pub k_family: Option<usize>,
    /// Disable every budget (exact counts). Explicit k flags still apply.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub dict: DictArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on sampled combinations per level.
    #[arg(long)]
    pub max_models: Option<usize>,
    /// Number of selected features.
    #[arg(long)]
    pub m: Option<usize>,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Select features inside each training fold.
    #[arg(long)]
    pub select_per_fold: bool,
    /// Scalar type for features and learners.
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Learners to run (knn, svm, rf, mlp).
    #[arg(long, value_delimiter = ',')]
    pub learners: Option<Vec<String>>,
    /// Neighbours for kNN.
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long, value_enum)]
    pub knn_metric: Option<MetricArg>,
    /// SVM soft-margin penalty.
    #[arg(long)]
    pub svm_c: Option<f64>,
    /// Trees in the random forest.
    #[arg(long)]
    pub rf_trees: Option<usize>,
    /// Maximum random-forest tree depth.
    #[arg(long)]
    pub rf_depth: Option<usize>,
    /// MLP hidden layer sizes.
    #[arg(long, value_delimiter = ',')]
    pub mlp_hidden: Option<Vec<usize>>,
    /// MLP L2 penalty.
    #[arg(long)]
    pub mlp_alpha: Option<f64>,
    /// MLP optimizer iteration cap.
    #[arg(long)]
    pub mlp_max_iter: Option<usize>,
}

impl ExperimentArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            config: self.common.config.clone(),
            n: self.dict.n,
            m: self.m,
            max_models: self.max_models,
            seed: self.seed,
            jobs: self.common.jobs,
            folds: self.folds,
            select_per_fold: self.select_per_fold,
            exact: self.dict.exact,
            k_malware: self.dict.k_malware,
            k_benign: self.dict.k_benign,
            k_family: self.dict.k_family,
            precision: self.precision,
            learners: self.learners.clone(),
            knn_k: self.knn_k,
            knn_metric: self.knn_metric,
            svm_c: self.svm_c,
            rf_trees: self.rf_trees,
            rf_depth: self.rf_depth,
            mlp_hidden: self.mlp_hidden.clone(),
            mlp_alpha: self.mlp_alpha,
            mlp_max_iter: self.mlp_max_iter,
            ..Overrides::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub dict: DictArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Features selected per family.
    #[arg(long)]
    pub m: Option<usize>,
}

impl ExtractArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            config: self.common.config.clone(),
            n: self.dict.n,
            m: self.m,
            jobs: self.common.jobs,
            exact: self.dict.exact,
            k_malware: self.dict.k_malware,
            k_benign: self.dict.k_benign,
            k_family: self.dict.k_family,
            ..Overrides::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct RunLevelArgs {
    /// Number of families merged into the malware class.
    #[arg(long)]
    pub level: usize,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug)]
pub struct RunAllArgs {
    /// Levels to run (default: 1 through the family count).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug)]
pub struct SweepRfArgs {
    /// Levels to sweep (default: 1,5,10,15,20 up to the family count).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Maximum depths to try.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug)]
pub struct SweepMlpArgs {
    /// Levels to sweep (default: 1,5,10,15,20 up to the family count).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// L2 penalties to try.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// N-gram lengths to compare.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Levels to run (default: every level).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory written by one of the experiment commands.
    #[arg(long, value_name = "DIR")]
    pub results: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// `all` or a comma list of: levels, families, boxplots, roc, paired, sweeps, ngrams.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub figures: Vec<String>,
}
