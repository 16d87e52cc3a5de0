//! Dependency-free SVG charts. Output bytes depend only on the spec and table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::distribution_stats;

use super::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Grouped bars over a categorical x column.
    Bar,
    /// High/average/low lines; the first and last series are dashed.
    LineTriple,
    MultiLine,
    /// One box per distinct x value over the single y column.
    Boxplot,
    /// FPR/TPR curves on the unit square with the chance diagonal.
    Roc,
    /// Exactly two bar series per category.
    PairedBar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub title: String,
    /// x (or category) column.
    pub x: String,
    /// Value columns, one series each.
    pub y: Vec<String>,
    /// Split every value column into one series per distinct value of this column.
    pub group: Option<String>,
    /// Keep only rows where each column equals the given value.
    pub filter: Vec<(String, String)>,
    pub x_label: String,
    pub y_label: String,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    /// Plot x on a log10 axis.
    pub x_log: bool,
    pub output: PathBuf,
}

impl PlotSpec {
    pub fn new(kind: PlotKind, title: &str, x: &str, y: &[&str], output: PathBuf) -> PlotSpec {
        PlotSpec {
            kind,
            title: title.to_string(),
            x: x.to_string(),
            y: y.iter().map(|s| s.to_string()).collect(),
            group: None,
            filter: Vec::new(),
            x_label: x.to_string(),
            y_label: y.join(", "),
            x_range: None,
            y_range: None,
            x_log: false,
            output,
        }
    }

    pub fn grouped(mut self, column: &str) -> Self {
        self.group = Some(column.to_string());
        self
    }

    pub fn filtered(mut self, column: &str, value: &str) -> Self {
        self.filter.push((column.to_string(), value.to_string()));
        self
    }

    pub fn labels(mut self, x: &str, y: &str) -> Self {
        self.x_label = x.to_string();
        self.y_label = y.to_string();
        self
    }

    pub fn y_range(mut self, lo: f64, hi: f64) -> Self {
        self.y_range = Some((lo, hi));
        self
    }

    pub fn log_x(mut self) -> Self {
        self.x_log = true;
        self
    }

    fn check(&self, table: &Table) -> Result<()> {
        let cols = std::iter::once(&self.x)
            .chain(&self.y)
            .chain(&self.group)
            .chain(self.filter.iter().map(|f| &f.0));
        for c in cols {
            table.index_of(c)?;
        }
        if self.y.is_empty() {
            return Err(Error::Render("plot needs at least one value column".into()));
        }
        for (lo, hi) in self.x_range.iter().chain(&self.y_range) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Render(format!("axis range ({lo}, {hi}) is not a finite interval")));
            }
        }
        match self.kind {
            PlotKind::PairedBar if self.y.len() != 2 || self.group.is_some() => Err(Error::Render(
                "paired bars need exactly two value columns and no grouping".into(),
            )),
            PlotKind::Boxplot if self.y.len() != 1 || self.group.is_some() => Err(Error::Render(
                "boxplots take one value column and no grouping".into(),
            )),
            _ => Ok(()),
        }
    }
}

struct Series {
    name: String,
    points: Vec<(String, f64)>,
}

fn build_series(spec: &PlotSpec, table: &Table) -> Result<Vec<Series>> {
    let rows: Vec<&Vec<String>> = table
        .rows
        .iter()
        .filter(|r| {
            spec.filter
                .iter()
                .all(|(c, v)| r[table.index_of(c).expect("checked")] == *v)
        })
        .collect();
    let xi = table.index_of(&spec.x)?;
    let gi = spec.group.as_ref().map(|g| table.index_of(g)).transpose()?;
    let mut groups: Vec<Option<String>> = Vec::new();
    match gi {
        Some(g) => {
            for r in &rows {
                if !groups.iter().any(|v| v.as_deref() == Some(&r[g])) {
                    groups.push(Some(r[g].clone()));
                }
            }
        }
        None => groups.push(None),
    }
    let mut out = Vec::new();
    for ycol in &spec.y {
        let yi = table.index_of(ycol)?;
        for g in &groups {
            let name = match (g, spec.y.len()) {
                (Some(g), 1) => g.clone(),
                (Some(g), _) => format!("{ycol} {g}"),
                (None, _) => ycol.clone(),
            };
            let mut points = Vec::new();
            for r in rows.iter().filter(|r| match (g, gi) {
                (Some(g), Some(i)) => &r[i] == g,
                _ => true,
            }) {
                if r[yi].is_empty() {
                    continue;
                }
                let v: f64 = r[yi]
                    .parse()
                    .map_err(|_| Error::Render(format!("column {ycol}: {:?} is not a number", r[yi])))?;
                points.push((r[xi].clone(), v));
            }
            out.push(Series { name, points });
        }
    }
    Ok(out)
}

const W: f64 = 720.0;
const H: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 80.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step of 1, 2 or 5 times a power of ten giving roughly five intervals.
fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mut mag = 1.0;
    while mag * 10.0 <= raw {
        mag *= 10.0;
    }
    while mag > raw {
        mag /= 10.0;
    }
    let r = raw / mag;
    mag * if r <= 1.0 {
        1.0
    } else if r <= 2.0 {
        2.0
    } else if r <= 5.0 {
        5.0
    } else {
        10.0
    }
}

fn auto_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 1.0, hi + 1.0);
    }
    let step = nice_step(hi - lo);
    ((lo / step).floor() * step, (hi / step).ceil() * step)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

struct Frame {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(spec: &PlotSpec, x: (f64, f64), y: (f64, f64)) -> Frame {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            esc(&spec.title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 10.0,
            esc(&spec.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            esc(&spec.y_label)
        );
        Frame { svg, x, y }
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn y_axis(&mut self) {
        for t in ticks(self.y.0, self.y.1) {
            let y = self.py(t);
            let _ = writeln!(
                self.svg,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                W - RIGHT,
                LEFT - 6.0,
                y + 4.0,
                fmt_num(t)
            );
        }
        let _ = writeln!(
            self.svg,
            r##"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="#000000"/>"##,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
    }

    fn x_numeric_axis(&mut self, log: bool) {
        for t in ticks(self.x.0, self.x.1) {
            let x = self.px(t);
            let label = if log { format!("1e{}", fmt_num(t)) } else { fmt_num(t) };
            let _ = writeln!(
                self.svg,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                H - BOTTOM + 18.0,
                label
            );
        }
    }

    fn x_category_axis(&mut self, cats: &[String]) {
        let band = (W - LEFT - RIGHT) / cats.len() as f64;
        let rotate = cats.len() > 8;
        for (i, c) in cats.iter().enumerate() {
            let x = LEFT + band * (i as f64 + 0.5);
            let y = H - BOTTOM + 16.0;
            if rotate {
                let _ = writeln!(
                    self.svg,
                    r#"<text x="{x:.2}" y="{y:.2}" text-anchor="end" font-size="10" transform="rotate(-35 {x:.2} {y:.2})">{}</text>"#,
                    esc(c)
                );
            } else {
                let _ = writeln!(self.svg, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle">{}</text>"#, esc(c));
            }
        }
    }

    fn legend(&mut self, names: &[(String, &str, bool)]) {
        for (i, (name, color, dashed)) in names.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let x = W - RIGHT + 14.0;
            let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(
                self.svg,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                x + 22.0,
                x + 28.0,
                y + 4.0,
                esc(name)
            );
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn parse_x(s: &str, column: &str, log: bool) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Render(format!("column {column}: {s:?} is not a number")))?;
    if log {
        if v <= 0.0 {
            return Err(Error::Render(format!("column {column}: {v} cannot go on a log axis")));
        }
        Ok(v.log10())
    } else {
        Ok(v)
    }
}

fn categories(series: &[Series]) -> Vec<String> {
    let mut cats: Vec<String> = Vec::new();
    for s in series {
        for (x, _) in &s.points {
            if !cats.contains(x) {
                cats.push(x.clone());
            }
        }
    }
    cats
}

fn render_lines(spec: &PlotSpec, series: &[Series]) -> Result<String> {
    let log = spec.x_log && spec.kind != PlotKind::Roc;
    let numeric: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            let mut pts = s
                .points
                .iter()
                .map(|(x, y)| Ok((parse_x(x, &spec.x, log)?, *y)))
                .collect::<Result<Vec<_>>>()?;
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            Ok(pts)
        })
        .collect::<Result<_>>()?;
    let roc = spec.kind == PlotKind::Roc;
    let x = spec.x_range.unwrap_or_else(|| {
        if roc {
            (0.0, 1.0)
        } else {
            let r = auto_range(numeric.iter().flatten().map(|p| p.0));
            if r.0 == r.1 {
                (r.0 - 1.0, r.1 + 1.0)
            } else {
                r
            }
        }
    });
    let x = if !roc && spec.x_range.is_none() {
        // keep lines off the frame edges
        let (lo, hi) = (
            numeric.iter().flatten().map(|p| p.0).fold(f64::INFINITY, f64::min),
            numeric.iter().flatten().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
        );
        if lo.is_finite() && lo < hi {
            let pad = (hi - lo) * 0.04;
            (lo - pad, hi + pad)
        } else if lo.is_finite() {
            (lo - 1.0, lo + 1.0)
        } else {
            x
        }
    } else {
        x
    };
    let y = spec
        .y_range
        .unwrap_or_else(|| if roc { (0.0, 1.0) } else { auto_range(numeric.iter().flatten().map(|p| p.1)) });
    let mut f = Frame::new(spec, x, y);
    f.y_axis();
    f.x_numeric_axis(log);
    if roc {
        let _ = writeln!(
            f.svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-dasharray="4,4"/>"##,
            f.px(0.0),
            f.py(0.0),
            f.px(1.0),
            f.py(1.0)
        );
    }
    let mut legend = Vec::new();
    for (i, (s, pts)) in series.iter().zip(&numeric).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dashed = spec.kind == PlotKind::LineTriple && series.len() == 3 && i != 1;
        let path: Vec<String> = pts.iter().map(|&(a, b)| format!("{:.2},{:.2}", f.px(a), f.py(b))).collect();
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            f.svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            path.join(" ")
        );
        if !roc {
            for &(a, b) in pts {
                let _ = writeln!(
                    f.svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    f.px(a),
                    f.py(b)
                );
            }
        }
        legend.push((s.name.clone(), color, dashed));
    }
    f.legend(&legend);
    Ok(f.finish())
}

fn render_bars(spec: &PlotSpec, series: &[Series]) -> Result<String> {
    let cats = categories(series);
    if cats.is_empty() {
        return Err(Error::Render(format!("{}: no rows to plot", spec.title)));
    }
    let y = spec.y_range.unwrap_or_else(|| {
        let r = auto_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        (r.0.min(0.0), r.1)
    });
    let mut f = Frame::new(spec, (0.0, cats.len() as f64), y);
    f.y_axis();
    f.x_category_axis(&cats);
    let band = (W - LEFT - RIGHT) / cats.len() as f64;
    let bar = band * 0.8 / series.len() as f64;
    let base = f.py(y.0.max(0.0).min(y.1));
    let mut legend = Vec::new();
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (x, v) in &s.points {
            let ci = cats.iter().position(|c| c == x).expect("category");
            let left = LEFT + band * ci as f64 + band * 0.1 + bar * si as f64;
            let top = f.py(v.clamp(y.0, y.1));
            let _ = writeln!(
                f.svg,
                r#"<rect x="{left:.2}" y="{:.2}" width="{bar:.2}" height="{:.2}" fill="{color}"><title>{}: {}</title></rect>"#,
                top.min(base),
                (base - top).abs(),
                esc(&s.name),
                fmt_num(*v)
            );
        }
        legend.push((s.name.clone(), color, false));
    }
    f.legend(&legend);
    Ok(f.finish())
}

fn render_boxes(spec: &PlotSpec, series: &[Series]) -> Result<String> {
    let s = &series[0];
    let mut groups: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    let cats = categories(series);
    for (x, v) in &s.points {
        let ci = cats.iter().position(|c| c == x).expect("category");
        groups.entry(ci).or_insert_with(|| (x.clone(), Vec::new())).1.push(*v);
    }
    if groups.is_empty() {
        return Err(Error::Render(format!("{}: no rows to plot", spec.title)));
    }
    let y = spec
        .y_range
        .unwrap_or_else(|| auto_range(s.points.iter().map(|p| p.1)));
    let mut f = Frame::new(spec, (0.0, cats.len() as f64), y);
    f.y_axis();
    f.x_category_axis(&cats);
    let band = (W - LEFT - RIGHT) / cats.len() as f64;
    let color = PALETTE[0];
    for (ci, (_, vals)) in &groups {
        let st = distribution_stats(vals)?;
        let cx = LEFT + band * (*ci as f64 + 0.5);
        let half = band * 0.3;
        let _ = writeln!(
            f.svg,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
            f.py(st.min),
            f.py(st.max)
        );
        let _ = writeln!(
            f.svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#dbe9f6" stroke="{color}"/>"##,
            cx - half,
            f.py(st.q3),
            2.0 * half,
            f.py(st.q1) - f.py(st.q3)
        );
        for (v, w) in [(st.median, 2.0), (st.min, 1.0), (st.max, 1.0)] {
            let hw = if w > 1.0 { half } else { half * 0.5 };
            let _ = writeln!(
                f.svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{w}"/>"#,
                cx - hw,
                f.py(v),
                cx + hw,
                f.py(v)
            );
        }
    }
    f.legend(&[(s.name.clone(), color, false)]);
    Ok(f.finish())
}

/// Render `table` as a standalone SVG document.
pub fn render(spec: &PlotSpec, table: &Table) -> Result<String> {
    spec.check(table)?;
    let series = build_series(spec, table)?;
    match spec.kind {
        PlotKind::LineTriple | PlotKind::MultiLine | PlotKind::Roc => render_lines(spec, &series),
        PlotKind::Bar | PlotKind::PairedBar => render_bars(spec, &series),
        PlotKind::Boxplot => render_boxes(spec, &series),
    }
}

/// Render and write to `spec.output`.
pub fn render_to_file(spec: &PlotSpec, table: &Table) -> Result<()> {
    let svg = render(spec, table)?;
    crate::write_atomic(&spec.output, svg.as_bytes())
}
