use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use bytegram::corpus::{
    default_family_specs, generate_synthetic, load_manifest, load_synth_spec, save_manifest, save_synth_spec,
    scan_corpus_root, write_corpus, CorpusManifest, Label, Sample, ScanOptions, ScanReport,
};
use bytegram::experiments::sweeps::{
    run_ngram_comparison, sweep_mlp_alpha, sweep_rf_depth, DEFAULT_SWEEP_LEVELS,
};
use bytegram::experiments::{output, run_level, LevelResult, PreparedCorpus};
use bytegram::features::{select_features, write_feature_set};
use bytegram::learners::{ForestConfig, LearnerConfig, MlpConfig};
use bytegram::ngram::{dictionary_to_string, read_dictionary, Budgets, Origin};
use bytegram::report::{generate_report, Table, FIGURE_GROUPS};
use bytegram::write_atomic;

use crate::cli::*;
use crate::config::{self, write_used, CorpusSource, Overrides, RunConfig};

const DICTS_FORMAT: &str = "bytegram-dicts";
const INDEX_FILE: &str = "index.csv";
const PARAMS_FILE: &str = "params.json";

/// Monomorphize `body` for the configured scalar type.
macro_rules! with_scalar {
    ($p:expr, $t:ident => $body:expr) => {
        match $p {
            Precision::F32 => {
                type $t = f32;
                $body
            }
            Precision::F64 => {
                type $t = f64;
                $body
            }
        }
    };
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenSynth(a) => gen_synth(a),
        Command::Scan(a) => scan(a),
        Command::Extract(a) => extract(a),
        Command::RunLevel(a) => {
            let cfg = setup(cmd.name(), &a.exp, a.exp.overrides())?;
            let corpus = prepared(&cfg)?;
            ensure!(
                (1..=corpus.family_count()).contains(&a.level),
                "level {} outside 1..={}",
                a.level,
                corpus.family_count()
            );
            run_and_write(&cfg, &corpus, &[a.level], &a.exp.common.out)
        }
        Command::RunAllLevels(a) => {
            let o = Overrides {
                levels: a.levels.clone(),
                ..a.exp.overrides()
            };
            let cfg = setup(cmd.name(), &a.exp, o)?;
            let corpus = prepared(&cfg)?;
            let levels = cfg.levels_for(corpus.family_count())?;
            run_and_write(&cfg, &corpus, &levels, &a.exp.common.out)
        }
        Command::SweepRfDepth(a) => {
            let o = Overrides {
                levels: a.levels.clone(),
                depths: a.depths.clone(),
                ..a.exp.overrides()
            };
            let cfg = setup(cmd.name(), &a.exp, o)?;
            let corpus = prepared(&cfg)?;
            let levels = sweep_levels(&cfg, corpus.family_count())?;
            let forest = cfg
                .learners
                .iter()
                .find_map(|l| match l {
                    LearnerConfig::RandomForest(f) => Some(f.clone()),
                    _ => None,
                })
                .unwrap_or_else(ForestConfig::default);
            let table = with_scalar!(cfg.precision, T => sweep_rf_depth::<T>(
                &cfg.level_config(1), &corpus, &levels, &cfg.depths, &forest
            ))?;
            let path = a.exp.common.out.join(output::RF_DEPTH_FILE);
            output::write_sweep(&table, &path)?;
            info!("wrote {}", path.display());
            Ok(())
        }
        Command::SweepMlpAlpha(a) => {
            let o = Overrides {
                levels: a.levels.clone(),
                alphas: a.alphas.clone(),
                ..a.exp.overrides()
            };
            let cfg = setup(cmd.name(), &a.exp, o)?;
            let corpus = prepared(&cfg)?;
            let levels = sweep_levels(&cfg, corpus.family_count())?;
            let mlp = cfg
                .learners
                .iter()
                .find_map(|l| match l {
                    LearnerConfig::Mlp(m) => Some(m.clone()),
                    _ => None,
                })
                .unwrap_or_else(MlpConfig::default);
            let table = with_scalar!(cfg.precision, T => sweep_mlp_alpha::<T>(
                &cfg.level_config(1), &corpus, &levels, &cfg.alphas, &mlp
            ))?;
            let path = a.exp.common.out.join(output::MLP_ALPHA_FILE);
            output::write_sweep(&table, &path)?;
            info!("wrote {}", path.display());
            Ok(())
        }
        Command::CompareNgrams(a) => {
            let o = Overrides {
                levels: a.levels.clone(),
                ns: a.ns.clone(),
                ..a.exp.overrides()
            };
            let cfg = setup(cmd.name(), &a.exp, o)?;
            let samples = load_samples(&cfg)?;
            let families = family_count(&samples);
            let levels = cfg.levels_for(families)?;
            let curves = with_scalar!(cfg.precision, T => run_ngram_comparison::<T>(
                &cfg.level_config(1), &samples, &cfg.budgets, &cfg.n_values, &levels
            ))?;
            let written = output::write_ngram_comparison(&curves, &a.exp.common.out)?;
            info!("wrote {} files under {}", written.len(), a.exp.common.out.display());
            Ok(())
        }
        Command::Report(a) => report(a),
    }
}


fn init_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    Ok(())
}

/// Refuse an output directory that is, or lies inside, an input directory.
pub fn check_output(input: &Path, out: &Path, allow_nested: bool) -> Result<()> {
    let input = input
        .canonicalize()
        .with_context(|| format!("cannot open {}", input.display()))?;
    let out_abs = out.canonicalize().or_else(|_| std::path::absolute(out))?;
    if out_abs == input || (!allow_nested && out_abs.starts_with(&input)) {
        bail!(
            "--out {} would write into the input {}; choose a separate directory",
            out.display(),
            input.display()
        );
    }
    Ok(())
}

fn input_of(cfg: &RunConfig) -> Option<(&Path, bool)> {
    match cfg.corpus.as_ref()? {
        CorpusSource::Directory { path } => Some((path, false)),
        CorpusSource::SyntheticSpec { .. } => None,
        CorpusSource::Dictionaries { path } => Some((path, true)),
    }
}

/// Resolve and validate the configuration, then record it under `--out`.
fn setup(command: &str, exp: &ExperimentArgs, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = config::resolve(&overrides, &exp.corpus)?;
    adopt_dict_params(&mut cfg, &overrides)?;
    if let Some((input, nested)) = input_of(&cfg) {
        check_output(input, &exp.common.out, nested)?;
    }
    init_jobs(cfg.jobs)?;
    write_used(&exp.common.out, command, &cfg)?;
    info!("{command}: configuration validated");
    Ok(cfg)
}

fn family_count(samples: &[Sample]) -> usize {
    let mut names: Vec<&str> = samples
        .iter()
        .filter(|s| s.label() == Label::Malware)
        .map(|s| s.family())
        .collect();
    names.sort_unstable();
    names.dedup();
    names.len()
}

fn sweep_levels(cfg: &RunConfig, families: usize) -> Result<Vec<usize>> {
    if cfg.levels.is_empty() {
        return Ok(DEFAULT_SWEEP_LEVELS
            .iter()
            .copied()
            .filter(|&l| l <= families)
            .collect());
    }
    cfg.levels_for(families)
}

fn run_and_write(cfg: &RunConfig, corpus: &PreparedCorpus, levels: &[usize], out: &Path) -> Result<()> {
    let mut results: Vec<LevelResult> = Vec::with_capacity(levels.len());
    for &level in levels {
        let lc = cfg.level_config(level);
        let r = with_scalar!(cfg.precision, T => run_level::<T>(&lc, corpus))
            .with_context(|| format!("level {level}"))?;
        output::write_level(&r, out)?;
        for a in r.aggregates() {
            info!(
                "level {level:>2} {:<13} avg {:.4} high {:.4} low {:.4} over {}",
                a.learner, a.avg, a.high, a.low, a.count
            );
        }
        if !r.failures.is_empty() {
            warn!(
                "level {level}: {} failed evaluations, see {}",
                r.failures.len(),
                output::failures_file(level)
            );
        }
        results.push(r);
    }
    let written = output::write_results(&results, out)?;
    info!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}

fn load_directory(root: &Path) -> Result<ScanReport> {
    let report = scan_corpus_root(root, &ScanOptions::default())?;
    if !report.warnings.is_empty() {
        warn!("{} files skipped while scanning {}", report.warnings.len(), root.display());
    }
    let manifest_path = root.join("manifest.json");
    if manifest_path.exists() {
        let manifest = load_manifest(&manifest_path)?;
        check_manifest(&manifest, &report.samples)
            .with_context(|| format!("{} disagrees with the directory contents", manifest_path.display()))?;
    }
    Ok(report)
}

fn check_manifest(manifest: &CorpusManifest, samples: &[Sample]) -> Result<()> {
    let found = CorpusManifest::from_samples(samples, None);
    let counts = |m: &CorpusManifest| -> BTreeMap<String, usize> {
        m.families.iter().map(|f| (f.name.clone(), f.count)).collect()
    };
    let (want, got) = (counts(manifest), counts(&found));
    if want != got {
        bail!("manifest lists families {want:?} but found {got:?}");
    }
    if manifest.n_benign != found.n_benign {
        bail!("manifest lists {} benign samples but found {}", manifest.n_benign, found.n_benign);
    }
    Ok(())
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match &cfg.corpus {
        Some(CorpusSource::Directory { path }) => Ok(load_directory(path)?.samples),
        Some(CorpusSource::SyntheticSpec { path }) => {
            let p = load_synth_spec(path)?;
            Ok(generate_synthetic(&p.families, p.per_family, p.n_benign, p.seed)?.0)
        }
        Some(CorpusSource::Dictionaries { .. }) => {
            bail!("this command counts n-grams itself; give --corpus or --synth-spec instead of --dicts")
        }
        None => bail!("no corpus: give --corpus, --synth-spec or --dicts"),
    }
}

fn prepared(cfg: &RunConfig) -> Result<PreparedCorpus> {
    let corpus = match &cfg.corpus {
        Some(CorpusSource::Dictionaries { path }) => load_dicts(path, cfg)?,
        _ => {
            let samples = load_samples(cfg)?;
            info!("loaded {} samples", samples.len());
            PreparedCorpus::build(&samples, cfg.n, &cfg.budgets)?
        }
    };
    info!(
        "{} families, {} benign samples, n={}",
        corpus.family_count(),
        corpus.benign().len(),
        corpus.n()
    );
    Ok(corpus)
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let params = match &a.spec {
        Some(p) => load_synth_spec(p)?,
        None => {
            ensure!(a.families >= 1, "--families must be at least 1");
            ensure!(
                a.min_len >= 1 && a.min_len <= a.max_len,
                "need 1 <= --min-len <= --max-len"
            );
            bytegram::corpus::GeneratorParams {
                seed: a.seed,
                per_family: a.per_family,
                n_benign: a.benign,
                families: default_family_specs(a.families, a.separation, (a.min_len, a.max_len), a.seed),
            }
        }
    };
    let (samples, manifest) = generate_synthetic(&params.families, params.per_family, params.n_benign, params.seed)?;
    write_used(&a.out, "gen-synth", &params)?;
    write_corpus(&samples, &manifest, &a.out)?;
    save_synth_spec(&params, &a.out.join("synth_spec.json"))?;
    info!(
        "wrote {} samples in {} families plus {} benign to {}",
        samples.len() - params.n_benign,
        params.families.len(),
        params.n_benign,
        a.out.display()
    );
    Ok(())
}

fn scan(a: &ScanArgs) -> Result<()> {
    check_output(&a.corpus, &a.out, false)?;
    write_used(&a.out, "scan", &serde_json::json!({ "corpus": a.corpus }))?;
    let report = load_directory(&a.corpus)?;
    let manifest = CorpusManifest::from_samples(&report.samples, None);
    save_manifest(&manifest, &a.out.join("manifest.json"))?;
    let rows = report
        .warnings
        .iter()
        .map(|w| vec![w.path.display().to_string(), w.reason.clone()])
        .collect();
    let table = Table::new(vec!["path".into(), "reason".into()], rows)?;
    write_atomic(&a.out.join("scan_warnings.csv"), &table.to_csv()?)?;
    for f in &manifest.families {
        info!("{:<24} {} samples", f.name, f.count);
    }
    info!("benign: {} samples; {} files skipped", manifest.n_benign, report.warnings.len());
    Ok(())
}

/// Contents of `params.json` in an extracted dictionary directory.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictParams {
    format: String,
    version: u32,
    n: usize,
    budgets: Budgets,
}

fn read_params(dir: &Path) -> Result<DictParams> {
    let path = dir.join(PARAMS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let p: DictParams = serde_json::from_str(&text).with_context(|| format!("invalid {}", path.display()))?;
    ensure!(
        p.format == DICTS_FORMAT && p.version == 1,
        "{}: unsupported format {} v{}",
        path.display(),
        p.format,
        p.version
    );
    Ok(p)
}

/// Extracted dictionaries fix n and the budgets; explicit conflicting flags
/// are an error rather than being silently ignored.
fn adopt_dict_params(cfg: &mut RunConfig, o: &Overrides) -> Result<()> {
    let Some(CorpusSource::Dictionaries { path }) = &cfg.corpus else {
        return Ok(());
    };
    let p = read_params(path)?;
    if let Some(n) = o.n {
        ensure!(n == p.n, "--n {n} conflicts with dictionaries extracted at n={}", p.n);
    }
    let budget_flags = o.exact || o.k_malware.is_some() || o.k_benign.is_some() || o.k_family.is_some();
    if budget_flags && cfg.budgets != p.budgets {
        bail!("budget flags conflict with the extracted dictionaries ({:?})", p.budgets);
    }
    cfg.n = p.n;
    cfg.budgets = p.budgets;
    Ok(())
}

fn dict_file_name(id: &str) -> String {
    let base = id.rsplit('/').next().unwrap_or(id);
    format!("{base}.ngr")
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let cfg = config::resolve(&a.overrides(), &a.corpus)?;
    if let Some((input, nested)) = input_of(&cfg) {
        check_output(input, &a.common.out, nested)?;
    }
    init_jobs(cfg.jobs)?;
    write_used(&a.common.out, "extract", &cfg)?;
    let samples = load_samples(&cfg)?;
    let corpus = PreparedCorpus::build(&samples, cfg.n, &cfg.budgets)?;
    let out = &a.common.out;

    let mut index = Vec::new();
    let members = (0..corpus.family_count()).flat_map(|f| {
        let name = &corpus.families()[f];
        corpus
            .family_samples(f)
            .iter()
            .map(move |(id, d)| (name.as_str(), Label::Malware, id, d))
    });
    let benign = corpus
        .benign()
        .iter()
        .map(|(id, d)| (bytegram::corpus::BENIGN_FAMILY, Label::Benign, id, d));
    for (family, label, id, dict) in members.chain(benign) {
        let rel = PathBuf::from("samples").join(family).join(dict_file_name(id));
        write_atomic(&out.join(&rel), dictionary_to_string(dict).as_bytes())?;
        index.push(vec![
            id.clone(),
            family.to_string(),
            label.name().to_string(),
            rel.to_string_lossy().replace('\\', "/"),
        ]);
    }
    let index = Table::new(
        ["id", "family", "label", "path"].map(String::from).to_vec(),
        index,
    )?;
    write_atomic(&out.join(INDEX_FILE), &index.to_csv()?)?;

    for (f, name) in corpus.families().iter().enumerate() {
        let dict = corpus.family_dict(f);
        write_atomic(
            &out.join("families").join(format!("{name}.ngr")),
            dictionary_to_string(dict).as_bytes(),
        )?;
        let fs = select_features(&[dict], cfg.m, vec![name.clone()])?;
        let mut buf = Vec::new();
        write_feature_set(&fs, &mut buf)?;
        write_atomic(&out.join("features").join(format!("{name}.txt")), &buf)?;
    }

    let params = DictParams {
        format: DICTS_FORMAT.into(),
        version: 1,
        n: cfg.n,
        budgets: cfg.budgets,
    };
    let mut text = serde_json::to_string_pretty(&params)?;
    text.push('\n');
    write_atomic(&out.join(PARAMS_FILE), text.as_bytes())?;
    info!(
        "wrote dictionaries for {} samples in {} families to {}",
        index.rows.len(),
        corpus.family_count(),
        out.display()
    );
    Ok(())
}

fn load_dicts(dir: &Path, cfg: &RunConfig) -> Result<PreparedCorpus> {
    let index = Table::read_csv(&dir.join(INDEX_FILE))?;
    let cols = ["id", "family", "label", "path"].map(|c| index.index_of(c));
    let [id_c, fam_c, label_c, path_c] = cols.map(|c| c.map_err(anyhow::Error::from));
    let (id_c, fam_c, label_c, path_c) = (id_c?, fam_c?, label_c?, path_c?);
    let mut families: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut benign = Vec::new();
    for row in &index.rows {
        let path = dir.join(&row[path_c]);
        let label = match row[label_c].as_str() {
            "malware" => Label::Malware,
            "benign" => Label::Benign,
            other => bail!("{}: unknown label {other:?}", dir.join(INDEX_FILE).display()),
        };
        let origin = if label == Label::Malware { Origin::Sample } else { Origin::BenignPool };
        let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
        let dict = read_dictionary(BufReader::new(file), origin, &path.display().to_string())?;
        let entry = (row[id_c].clone(), dict);
        match label {
            Label::Malware => families.entry(row[fam_c].clone()).or_default().push(entry),
            Label::Benign => benign.push(entry),
        }
    }
    PreparedCorpus::from_sample_dicts(cfg.n, cfg.budgets, families.into_iter().collect(), benign)
        .map_err(|e| anyhow!(e).context(format!("dictionaries in {}", dir.display())))
}

fn report(a: &ReportArgs) -> Result<()> {
    ensure!(a.results.is_dir(), "{} is not a directory", a.results.display());
    check_output(&a.results, &a.out, true)?;
    let groups: Vec<&str> = if a.figures.iter().any(|g| g == "all") {
        ensure!(a.figures.len() == 1, "`all` cannot be combined with other figure groups");
        FIGURE_GROUPS.to_vec()
    } else {
        a.figures.iter().map(String::as_str).collect()
    };
    write_used(&a.out, "report", &serde_json::json!({ "results": a.results, "figures": groups }))?;
    let written = generate_report(&a.results, &a.out, &groups)?;
    info!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}
