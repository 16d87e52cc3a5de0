//! Figures and a text summary built only from the result CSVs.

pub mod svg;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::experiments::output::{
    combos_file, level_file, FAMILY_SEPARATOR, FOLD_MEAN_SUMMARY_FILE, MLP_ALPHA_FILE, NGRAM_COMPARISON_FILE,
    RF_DEPTH_FILE, SUMMARY_FILE,
};

pub use svg::{render, render_to_file, PlotKind, PlotSpec};

/// A CSV held as strings; numeric columns are parsed on demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Table> {
        if let Some(r) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(Error::Render(format!(
                "row has {} fields but the table has {} columns",
                r.len(),
                columns.len()
            )));
        }
        Ok(Table { columns, rows })
    }

    /// Parse CSV text with a header row. Lines starting with `#` are skipped.
    pub fn from_csv_str(text: &str, origin: &str) -> Result<Table> {
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns = rd.headers()?.iter().map(str::to_string).collect();
        let rows = rd
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(str::to_string).collect())
                    .map_err(|e| Error::parse(origin, e.position().map_or(0, |p| p.line() as usize), e.to_string()))
            })
            .collect::<Result<Vec<Vec<String>>>>()?;
        Table::new(columns, rows)
    }

    pub fn read_csv(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path)?;
        Table::from_csv_str(&text, &path.display().to_string())
    }

    pub fn index_of(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::Render(format!("missing column {column:?}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.index_of(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// Parse a column as numbers; empty cells are an error.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Render(format!("column {name}: {v:?} is not a number")))
            })
            .collect()
    }

    pub fn filter(&self, column: &str, value: &str) -> Result<Table> {
        let i = self.index_of(column)?;
        Ok(Table {
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| r[i] == value).cloned().collect(),
        })
    }

    /// Distinct values of a column in first-appearance order.
    pub fn distinct(&self, column: &str) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        for v in self.column(column)? {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(&self.columns)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        Ok(wr.into_inner().map_err(|e| e.into_error())?)
    }
}

fn level_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(level) = name
            .strip_prefix("level_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            out.push((level, dir.join(name)));
        }
    }
    out.sort();
    Ok(out)
}

/// Pooled rows of every `level_NN.csv` in the directory.
pub fn pooled_table(dir: &Path) -> Result<Option<Table>> {
    let mut combined: Option<Table> = None;
    for (_, p) in level_files(dir)? {
        let t = Table::read_csv(&p)?.filter("fold", "pooled")?;
        match &mut combined {
            None => combined = Some(t),
            Some(c) => {
                if c.columns != t.columns {
                    return Err(Error::Render(format!("{} has unexpected columns", p.display())));
                }
                c.rows.extend(t.rows);
            }
        }
    }
    Ok(combined)
}

/// `family,learner,bal_acc` for level 1, joining pooled rows with the combos file.
pub fn level1_family_table(dir: &Path) -> Result<Option<Table>> {
    let (lp, cp) = (dir.join(level_file(1)), dir.join(combos_file(1)));
    if !lp.exists() || !cp.exists() {
        return Ok(None);
    }
    let combos = Table::read_csv(&cp)?;
    let (ci, fi) = (combos.index_of("combo_id")?, combos.index_of("families")?);
    let pooled = Table::read_csv(&lp)?.filter("fold", "pooled")?;
    let (pc, pl, pb) = (
        pooled.index_of("combo_id")?,
        pooled.index_of("learner")?,
        pooled.index_of("bal_acc")?,
    );
    let mut rows = Vec::new();
    for r in &pooled.rows {
        let family = combos
            .rows
            .iter()
            .find(|c| c[ci] == r[pc])
            .map(|c| c[fi].clone())
            .ok_or_else(|| Error::Render(format!("combo {} missing from {}", r[pc], cp.display())))?;
        if family.contains(FAMILY_SEPARATOR) {
            return Err(Error::Render(format!("level-1 combo {} names several families", r[pc])));
        }
        rows.push(vec![family, r[pl].clone(), r[pb].clone()]);
    }
    Table::new(vec!["family".into(), "learner".into(), "bal_acc".into()], rows).map(Some)
}

/// `learner,combo_id,fpr,tpr` from the ROC files of `roc/`.
pub fn roc_table(dir: &Path) -> Result<Option<Table>> {
    let roc_dir = dir.join("roc");
    if !roc_dir.is_dir() {
        return Ok(None);
    }
    let mut names: Vec<String> = fs::read_dir(&roc_dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let mut rows = Vec::new();
    for name in names {
        // level_01_combo_0003_random_forest.csv
        let Some(rest) = name.strip_prefix("level_01_combo_").and_then(|s| s.strip_suffix(".csv")) else {
            continue;
        };
        let Some((combo, learner)) = rest.split_once('_') else {
            continue;
        };
        let Ok(combo) = combo.parse::<usize>() else {
            continue;
        };
        let t = Table::read_csv(&roc_dir.join(&name))?;
        let (x, y) = (t.index_of("fpr")?, t.index_of("tpr")?);
        for r in &t.rows {
            rows.push(vec![learner.to_string(), combo.to_string(), r[x].clone(), r[y].clone()]);
        }
    }
    Table::new(
        vec!["learner".into(), "combo_id".into(), "fpr".into(), "tpr".into()],
        rows,
    )
    .map(Some)
}

/// `learner,level_1,level_F` from the summary's first and last level.
pub fn first_last_table(summary: &Table) -> Result<Option<Table>> {
    let levels = summary.numbers("level")?;
    let (Some(first), Some(last)) = (
        levels.iter().copied().reduce(f64::min),
        levels.iter().copied().reduce(f64::max),
    ) else {
        return Ok(None);
    };
    if first == last {
        return Ok(None);
    }
    let (li, ai, lv) = (summary.index_of("learner")?, summary.index_of("avg")?, summary.index_of("level")?);
    let mut rows = Vec::new();
    for learner in summary.distinct("learner")? {
        let at = |lvl: f64| {
            summary
                .rows
                .iter()
                .find(|r| r[li] == learner && r[lv].parse::<f64>().ok() == Some(lvl))
                .map(|r| r[ai].clone())
                .unwrap_or_default()
        };
        rows.push(vec![learner.clone(), at(first), at(last)]);
    }
    Table::new(
        vec![
            "learner".into(),
            format!("level_{}", first as usize),
            format!("level_{}", last as usize),
        ],
        rows,
    )
    .map(Some)
}

/// Figure groups selectable with `--figures`.
pub const FIGURE_GROUPS: [&str; 7] = ["levels", "families", "boxplots", "roc", "paired", "sweeps", "ngrams"];

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Figure specs (with their input tables) for the requested groups.
pub fn figure_specs(results: &Path, out: &Path, groups: &[&str]) -> Result<Vec<(PlotSpec, Table)>> {
    for g in groups {
        if !FIGURE_GROUPS.contains(g) {
            return Err(Error::config(format!(
                "unknown figure group {g:?}; expected one of {}",
                FIGURE_GROUPS.join(", ")
            )));
        }
    }
    let want = |g: &str| groups.contains(&g);
    let mut specs = Vec::new();
    let mut missing = Vec::new();
    let svg = |name: &str| out.join(format!("{}.svg", sanitize(name)));

    let summary_path = results.join(SUMMARY_FILE);
    let summary = if summary_path.exists() { Some(Table::read_csv(&summary_path)?) } else { None };

    if want("levels") {
        match &summary {
            Some(s) => {
                for learner in s.distinct("learner")? {
                    specs.push((
                        PlotSpec::new(
                            PlotKind::LineTriple,
                            &format!("{learner}: balanced accuracy by level"),
                            "level",
                            &["high", "avg", "low"],
                            svg(&format!("levels_{learner}")),
                        )
                        .filtered("learner", &learner)
                        .labels("level", "balanced accuracy"),
                        s.clone(),
                    ));
                }
                specs.push((
                    PlotSpec::new(PlotKind::MultiLine, "Average balanced accuracy by level", "level", &["avg"], svg("levels_all"))
                        .grouped("learner")
                        .labels("level", "average balanced accuracy"),
                    s.clone(),
                ));
            }
            None => missing.push("levels"),
        }
    }
    if want("families") {
        match level1_family_table(results)? {
            Some(t) => specs.push((
                PlotSpec::new(PlotKind::Bar, "Level 1 balanced accuracy per family", "family", &["bal_acc"], svg("level1_families"))
                    .grouped("learner")
                    .labels("family", "balanced accuracy"),
                t,
            )),
            None => missing.push("families"),
        }
    }
    if want("boxplots") {
        match pooled_table(results)? {
            Some(t) => {
                for learner in t.distinct("learner")? {
                    specs.push((
                        PlotSpec::new(
                            PlotKind::Boxplot,
                            &format!("{learner}: per-combination balanced accuracy"),
                            "level",
                            &["bal_acc"],
                            svg(&format!("boxplot_{learner}")),
                        )
                        .filtered("learner", &learner)
                        .labels("level", "balanced accuracy"),
                        t.clone(),
                    ));
                }
            }
            None => missing.push("boxplots"),
        }
    }
    if want("roc") {
        match roc_table(results)? {
            Some(t) if !t.rows.is_empty() => {
                for learner in t.distinct("learner")? {
                    specs.push((
                        PlotSpec::new(
                            PlotKind::Roc,
                            &format!("{learner}: level 1 ROC curves"),
                            "fpr",
                            &["tpr"],
                            svg(&format!("roc_{learner}")),
                        )
                        .filtered("learner", &learner)
                        .grouped("combo_id")
                        .labels("false positive rate", "true positive rate"),
                        t.clone(),
                    ));
                }
            }
            _ => missing.push("roc"),
        }
    }
    if want("paired") {
        match summary.as_ref().map(first_last_table).transpose()?.flatten() {
            Some(t) => {
                let (a, b) = (t.columns[1].clone(), t.columns[2].clone());
                specs.push((
                    PlotSpec::new(
                        PlotKind::PairedBar,
                        &format!("Average balanced accuracy, {} vs {}", a.replace('_', " "), b.replace('_', " ")),
                        "learner",
                        &[&a, &b],
                        svg("first_vs_last_level"),
                    )
                    .labels("learner", "average balanced accuracy"),
                    t,
                ));
            }
            None => missing.push("paired"),
        }
    }
    if want("sweeps") {
        let mut any = false;
        for (file, param, log) in [(RF_DEPTH_FILE, "depth", false), (MLP_ALPHA_FILE, "alpha", true)] {
            let p = results.join(file);
            if !p.exists() {
                continue;
            }
            any = true;
            let mut spec = PlotSpec::new(
                PlotKind::MultiLine,
                &format!("Average balanced accuracy by {param}"),
                param,
                &["avg"],
                svg(file.trim_end_matches(".csv")),
            )
            .grouped("level")
            .labels(param, "average balanced accuracy");
            if log {
                spec = spec.log_x();
            }
            specs.push((spec, Table::read_csv(&p)?));
        }
        if !any {
            missing.push("sweeps");
        }
    }
    if want("ngrams") {
        let p = results.join(NGRAM_COMPARISON_FILE);
        if p.exists() {
            let t = Table::read_csv(&p)?;
            for learner in t.distinct("learner")? {
                specs.push((
                    PlotSpec::new(
                        PlotKind::MultiLine,
                        &format!("{learner}: average balanced accuracy by n"),
                        "level",
                        &["avg"],
                        svg(&format!("ngrams_{learner}")),
                    )
                    .filtered("learner", &learner)
                    .grouped("n")
                    .labels("level", "average balanced accuracy"),
                    t.clone(),
                ));
            }
        } else {
            missing.push("ngrams");
        }
    }
    if !missing.is_empty() {
        let explicit = groups.len() < FIGURE_GROUPS.len();
        if explicit {
            return Err(Error::config(format!(
                "no input for figure groups: {}",
                missing.join(", ")
            )));
        }
        warn!("skipping figure groups without input: {}", missing.join(", "));
    }
    Ok(specs)
}

/// Render the requested figures and `summary.txt` into `out`.
pub fn generate_report(results: &Path, out: &Path, groups: &[&str]) -> Result<Vec<PathBuf>> {
    let summary = summarize(results)?;
    let mut written = Vec::new();
    for (spec, table) in figure_specs(results, out, groups)? {
        render_to_file(&spec, &table)?;
        written.push(spec.output.clone());
    }
    let p = out.join("summary.txt");
    crate::write_atomic(&p, summary.as_bytes())?;
    written.push(p);
    Ok(written)
}

fn fmt_cell(v: &str) -> String {
    match v.parse::<f64>() {
        Ok(x) if v.contains('.') || v.contains('e') => format!("{x:.4}"),
        _ => if v.is_empty() { "-".into() } else { v.to_string() },
    }
}

/// Left-aligned fixed-width text table.
fn text_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain(std::iter::once(header[i].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i + 1 == cells.len() {
                s.push_str(c);
            } else {
                let _ = write!(s, "{c:<w$}  ", w = widths[i]);
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header));
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
}

fn summary_section(out: &mut String, title: &str, t: &Table) -> Result<()> {
    let _ = writeln!(out, "{title}");
    let cols = ["level", "learner", "high", "avg", "low", "count"];
    let idx = cols.iter().map(|c| t.index_of(c)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| idx.iter().map(|&i| fmt_cell(&r[i])).collect())
        .collect();
    text_table(out, &cols.map(String::from), &rows);
    Ok(())
}

/// Plain-text tables: per-level aggregates, level-1 accuracy per family with
/// the per-learner range, first-vs-last-level deltas, and any sweep tables.
pub fn summarize(results: &Path) -> Result<String> {
    if !results.is_dir() {
        return Err(Error::config(format!("{} is not a directory", results.display())));
    }
    let mut out = String::new();
    let mut sections = 0;

    let summary_path = results.join(SUMMARY_FILE);
    let summary = if summary_path.exists() { Some(Table::read_csv(&summary_path)?) } else { None };
    if let Some(s) = &summary {
        summary_section(&mut out, "Pooled balanced accuracy by level", s)?;
        sections += 1;
    }
    let fold_mean = results.join(FOLD_MEAN_SUMMARY_FILE);
    if fold_mean.exists() {
        summary_section(&mut out, "Fold-mean balanced accuracy by level", &Table::read_csv(&fold_mean)?)?;
        sections += 1;
    }

    if let Some(t) = level1_family_table(results)? {
        let learners = t.distinct("learner")?;
        let families: BTreeSet<String> = t.column("family")?.into_iter().map(String::from).collect();
        let lookup = |f: &str, l: &str| -> Option<f64> {
            t.rows.iter().find(|r| r[0] == f && r[1] == l).and_then(|r| r[2].parse().ok())
        };
        let _ = writeln!(out, "Level 1 balanced accuracy per family");
        let mut header = vec!["family".to_string()];
        header.extend(learners.iter().cloned());
        let mut rows: Vec<Vec<String>> = families
            .iter()
            .map(|f| {
                let mut r = vec![f.clone()];
                r.extend(learners.iter().map(|l| lookup(f, l).map_or("-".into(), |v| format!("{v:.4}"))));
                r
            })
            .collect();
        let spread: Vec<(f64, f64)> = learners
            .iter()
            .map(|l| {
                let vals: Vec<f64> = families.iter().filter_map(|f| lookup(f, l)).collect();
                (
                    vals.iter().copied().fold(f64::INFINITY, f64::min),
                    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            })
            .collect();
        let mut range_row = vec!["range".to_string()];
        range_row.extend(spread.iter().map(|(lo, hi)| format!("{:.4}", hi - lo)));
        rows.push(range_row);
        text_table(&mut out, &header, &rows);

        let _ = writeln!(out, "Level 1 spread across families");
        let rows: Vec<Vec<String>> = learners
            .iter()
            .zip(&spread)
            .map(|(l, (lo, hi))| vec![l.clone(), format!("{hi:.4}"), format!("{lo:.4}"), format!("{:.4}", hi - lo)])
            .collect();
        text_table(&mut out, &["learner", "high", "low", "range"].map(String::from), &rows);
        sections += 1;
    }

    if let Some(t) = summary.as_ref().map(first_last_table).transpose()?.flatten() {
        let _ = writeln!(
            out,
            "Average balanced accuracy, {} vs {}",
            t.columns[1].replace('_', " "),
            t.columns[2].replace('_', " ")
        );
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| {
                let delta = match (r[1].parse::<f64>(), r[2].parse::<f64>()) {
                    (Ok(a), Ok(b)) => format!("{:+.4}", b - a),
                    _ => "-".into(),
                };
                vec![r[0].clone(), fmt_cell(&r[1]), fmt_cell(&r[2]), delta]
            })
            .collect();
        let header = vec![t.columns[0].clone(), t.columns[1].clone(), t.columns[2].clone(), "delta".into()];
        text_table(&mut out, &header, &rows);
        sections += 1;
    }

    for (file, title) in [
        (RF_DEPTH_FILE, "Random forest depth sweep"),
        (MLP_ALPHA_FILE, "MLP alpha sweep"),
        (NGRAM_COMPARISON_FILE, "n-gram length comparison"),
    ] {
        let p = results.join(file);
        if p.exists() {
            let t = Table::read_csv(&p)?;
            let _ = writeln!(out, "{title}");
            let rows: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| fmt_cell(c)).collect()).collect();
            text_table(&mut out, &t.columns, &rows);
            sections += 1;
        }
    }

    if sections == 0 {
        return Err(Error::config(format!("no result files found in {}", results.display())));
    }
    Ok(out)
}
