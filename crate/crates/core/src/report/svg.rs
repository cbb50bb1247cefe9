use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{slug, BundleManifest, ReportError, Result, WIN_UNIT};
use crate::evaluation::Metric;

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 130.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartKind {
    /// One group per row of `group_column`, one bar per `series` column.
    GroupedBar { group_column: String, series: Vec<String> },
    /// Square 0/1 matrix with row labels in the first column; dark = 1.
    BooleanMatrix,
    /// Columns `subset, class, fpr, tpr`; one curve per (subset, class).
    Roc,
    /// Columns `x, y, class_index`.
    Scatter2d,
    /// Columns `rank, feature, score`.
    ImportanceBar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub title: String,
    /// CSV path relative to the bundle root.
    pub data: String,
    /// `(column, value)` equality filters applied to the rows.
    #[serde(default)]
    pub filter: Vec<(String, String)>,
    #[serde(default)]
    pub caption: Option<String>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str, data: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReportError::MissingData(format!("{data}: no column {name:?}")))
    }

    fn num(&self, r: usize, c: usize, data: &str) -> Result<f64> {
        let s = &self.rows[r][c];
        s.parse::<f64>()
            .map_err(|_| ReportError::MissingData(format!("{data}: non-numeric value {s:?}")))
    }
}

fn load(spec: &ChartSpec, bundle: &Path) -> Result<Table> {
    let path = bundle.join(&spec.data);
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| ReportError::MissingData(format!("{}: {e}", spec.data)))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let filters: Vec<(usize, &str)> = spec
        .filter
        .iter()
        .map(|(c, v)| Ok((table.col(c, &spec.data)?, v.as_str())))
        .collect::<Result<_>>()?;
    for rec in reader.records() {
        let rec = rec?;
        let row: Vec<String> = rec.iter().map(str::to_string).collect();
        if filters.iter().all(|&(c, v)| row.get(c).map(String::as_str) == Some(v)) {
            table.rows.push(row);
        }
    }
    if table.rows.is_empty() {
        return Err(ReportError::MissingData(format!("{}: no rows selected", spec.data)));
    }
    Ok(table)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn f(v: f64) -> String {
    format!("{v:.2}")
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#,
            W = WIDTH,
            H = HEIGHT
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            f(WIDTH / 2.0),
            esc(title)
        );
        Canvas { out }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(
            self.out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" {style}/>"#,
            f(x1),
            f(y1),
            f(x2),
            f(y2)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, class: &str) {
        let _ = writeln!(
            self.out,
            r#"<rect class="{class}" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            f(x),
            f(y),
            f(w.max(0.0)),
            f(h.max(0.0))
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
            f(x),
            f(y),
            esc(s)
        );
    }

    fn rotated_text(&mut self, x: f64, y: f64, angle: f64, s: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{x}" y="{y}" text-anchor="end" transform="rotate({a} {x} {y})">{}</text>"#,
            esc(s),
            x = f(x),
            y = f(y),
            a = f(angle)
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        let x = WIDTH - RIGHT + 15.0;
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 16.0 * i as f64;
            self.rect(x, y, 10.0, 10.0, color, "legend");
            self.text(x + 15.0, y + 9.0, "start", label);
        }
    }

    /// Left axis with five ticks between `lo` and `hi`.
    fn y_axis(&mut self, lo: f64, hi: f64, label: &str) {
        let bottom = HEIGHT - BOTTOM;
        self.line(LEFT, TOP, LEFT, bottom, r#"stroke="black""#);
        for i in 0..=5 {
            let v = lo + (hi - lo) * i as f64 / 5.0;
            let y = bottom - (bottom - TOP) * i as f64 / 5.0;
            self.line(LEFT - 4.0, y, LEFT, y, r#"stroke="black""#);
            self.text(LEFT - 6.0, y + 4.0, "end", &f(v));
        }
        self.rotated_text(18.0, TOP + (bottom - TOP) / 2.0, -90.0, label);
    }

    fn x_axis(&mut self, lo: f64, hi: f64, label: &str) {
        let bottom = HEIGHT - BOTTOM;
        let right = WIDTH - RIGHT;
        self.line(LEFT, bottom, right, bottom, r#"stroke="black""#);
        for i in 0..=5 {
            let v = lo + (hi - lo) * i as f64 / 5.0;
            let x = LEFT + (right - LEFT) * i as f64 / 5.0;
            self.line(x, bottom, x, bottom + 4.0, r#"stroke="black""#);
            self.text(x, bottom + 16.0, "middle", &f(v));
        }
        self.text(LEFT + (right - LEFT) / 2.0, bottom + 34.0, "middle", label);
    }

    fn finish(mut self, caption: Option<&str>) -> String {
        if let Some(c) = caption {
            self.text(LEFT, HEIGHT - 12.0, "start", c);
        }
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Renders one chart from bundle CSVs. Output depends only on the spec and
/// the file contents.
pub fn render_svg(spec: &ChartSpec, bundle: &Path) -> Result<String> {
    let table = load(spec, bundle)?;
    let mut c = Canvas::new(&spec.title);
    match &spec.kind {
        ChartKind::GroupedBar { group_column, series } => grouped_bar(&mut c, &table, spec, group_column, series)?,
        ChartKind::BooleanMatrix => boolean_matrix(&mut c, &table, spec)?,
        ChartKind::Roc => roc(&mut c, &table, spec)?,
        ChartKind::Scatter2d => scatter(&mut c, &table, spec)?,
        ChartKind::ImportanceBar => importance(&mut c, &table, spec)?,
    }
    Ok(c.finish(spec.caption.as_deref()))
}

fn grouped_bar(c: &mut Canvas, t: &Table, spec: &ChartSpec, group_column: &str, series: &[String]) -> Result<()> {
    if series.is_empty() {
        return Err(ReportError::MissingData("grouped bar chart without series".into()));
    }
    let gcol = t.col(group_column, &spec.data)?;
    let scols: Vec<usize> = series.iter().map(|s| t.col(s, &spec.data)).collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        values.push(scols.iter().map(|&sc| t.num(r, sc, &spec.data)).collect::<Result<Vec<f64>>>()?);
    }
    let vmax = values.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let hi = if vmax <= 1.0 { 1.0 } else { vmax.ceil() };
    c.y_axis(0.0, hi, "value");
    let bottom = HEIGHT - BOTTOM;
    let right = WIDTH - RIGHT;
    c.line(LEFT, bottom, right, bottom, r#"stroke="black""#);
    let group_w = (right - LEFT) / t.rows.len() as f64;
    let bar_w = group_w * 0.8 / series.len() as f64;
    for (g, row) in values.iter().enumerate() {
        let x0 = LEFT + g as f64 * group_w + group_w * 0.1;
        for (s, &v) in row.iter().enumerate() {
            let h = (bottom - TOP) * (v.max(0.0) / hi);
            c.rect(x0 + s as f64 * bar_w, bottom - h, bar_w, h, PALETTE[s % PALETTE.len()], "bar");
        }
        c.rotated_text(x0 + group_w * 0.4, bottom + 14.0, -30.0, &t.rows[g][gcol]);
    }
    let legend: Vec<(String, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), PALETTE[i % PALETTE.len()]))
        .collect();
    c.legend(&legend);
    Ok(())
}

fn boolean_matrix(c: &mut Canvas, t: &Table, spec: &ChartSpec) -> Result<()> {
    let n = t.header.len() - 1;
    if n == 0 || t.rows.len() != n {
        return Err(ReportError::MissingData(format!("{}: matrix is not square", spec.data)));
    }
    let size = ((HEIGHT - TOP - BOTTOM) / n as f64).min((WIDTH - RIGHT - LEFT - 100.0) / n as f64);
    let x0 = LEFT + 100.0;
    let y0 = TOP + 40.0;
    for (j, label) in t.header[1..].iter().enumerate() {
        c.rotated_text(x0 + (j as f64 + 0.5) * size, y0 - 4.0, -30.0, label);
    }
    for (i, row) in t.rows.iter().enumerate() {
        c.text(x0 - 6.0, y0 + (i as f64 + 0.6) * size, "end", &row[0]);
        for j in 0..n {
            let on = match row[j + 1].as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(ReportError::MissingData(format!("{}: bad cell {other:?}", spec.data))),
            };
            let fill = if on { "#222222" } else { "#eeeeee" };
            c.rect(x0 + j as f64 * size, y0 + i as f64 * size, size - 1.0, size - 1.0, fill, "cell");
        }
    }
    c.legend(&[("significant".into(), "#222222"), ("not significant".into(), "#eeeeee")]);
    Ok(())
}

fn roc(c: &mut Canvas, t: &Table, spec: &ChartSpec) -> Result<()> {
    let (sc, cc) = (t.col("subset", &spec.data)?, t.col("class", &spec.data)?);
    let (xc, yc) = (t.col("fpr", &spec.data)?, t.col("tpr", &spec.data)?);
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in 0..t.rows.len() {
        let key = format!("{} / {}", t.rows[r][sc], t.rows[r][cc]);
        let p = (t.num(r, xc, &spec.data)?, t.num(r, yc, &spec.data)?);
        match curves.last_mut() {
            Some((k, pts)) if *k == key => pts.push(p),
            _ => curves.push((key, vec![p])),
        }
    }
    c.x_axis(0.0, 1.0, "false positive rate");
    c.y_axis(0.0, 1.0, "true positive rate");
    let bottom = HEIGHT - BOTTOM;
    let right = WIDTH - RIGHT;
    let px = |v: f64| LEFT + v * (right - LEFT);
    let py = |v: f64| bottom - v * (bottom - TOP);
    c.line(px(0.0), py(0.0), px(1.0), py(1.0), r##"stroke="#999999" stroke-dasharray="4 4""##);
    let mut legend = Vec::new();
    for (i, (key, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", f(px(x)), f(py(y)))).collect();
        let _ = writeln!(
            c.out,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        legend.push((key.clone(), color));
    }
    c.legend(&legend);
    Ok(())
}

fn scatter(c: &mut Canvas, t: &Table, spec: &ChartSpec) -> Result<()> {
    let (xc, yc, kc) = (
        t.col("x", &spec.data)?,
        t.col("y", &spec.data)?,
        t.col("class_index", &spec.data)?,
    );
    let mut pts = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        let k: usize = t.rows[r][kc]
            .parse()
            .map_err(|_| ReportError::MissingData(format!("{}: bad class index", spec.data)))?;
        pts.push((t.num(r, xc, &spec.data)?, t.num(r, yc, &spec.data)?, k));
    }
    let bounds = |sel: fn(&(f64, f64, usize)) -> f64| {
        let lo = pts.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-9);
        (lo - pad, hi + pad)
    };
    let (xlo, xhi) = bounds(|p| p.0);
    let (ylo, yhi) = bounds(|p| p.1);
    c.x_axis(xlo, xhi, "t-SNE 1");
    c.y_axis(ylo, yhi, "t-SNE 2");
    let bottom = HEIGHT - BOTTOM;
    let right = WIDTH - RIGHT;
    for &(x, y, k) in &pts {
        let _ = writeln!(
            c.out,
            r#"<circle class="point" cx="{}" cy="{}" r="2" fill="{}"/>"#,
            f(LEFT + (x - xlo) / (xhi - xlo) * (right - LEFT)),
            f(bottom - (y - ylo) / (yhi - ylo) * (bottom - TOP)),
            PALETTE[k % PALETTE.len()]
        );
    }
    let max_k = pts.iter().map(|p| p.2).max().unwrap_or(0);
    let legend: Vec<(String, &str)> = (0..=max_k)
        .map(|k| (format!("class {k}"), PALETTE[k % PALETTE.len()]))
        .collect();
    c.legend(&legend);
    Ok(())
}

fn importance(c: &mut Canvas, t: &Table, spec: &ChartSpec) -> Result<()> {
    let (fc, sc) = (t.col("feature", &spec.data)?, t.col("score", &spec.data)?);
    let scores: Vec<f64> = (0..t.rows.len()).map(|r| t.num(r, sc, &spec.data)).collect::<Result<_>>()?;
    let hi = scores.iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let x0 = LEFT + 120.0;
    let right = WIDTH - RIGHT;
    let row_h = (HEIGHT - TOP - BOTTOM) / scores.len() as f64;
    for (i, &s) in scores.iter().enumerate() {
        let y = TOP + i as f64 * row_h;
        c.text(x0 - 6.0, y + row_h * 0.6, "end", &t.rows[i][fc]);
        let w = (right - x0) * s.max(0.0) / hi;
        c.rect(x0, y + row_h * 0.1, w, row_h * 0.8, PALETTE[0], "bar");
        c.text(x0 + w + 4.0, y + row_h * 0.6, "start", &format!("{s:.4}"));
    }
    Ok(())
}

fn stem(path: &str) -> &str {
    let name = path.rsplit('/').next().unwrap_or(path);
    name.strip_suffix(".csv").unwrap_or(name)
}

/// The standard figure set for a bundle, keyed by output file stem.
pub fn default_charts(bundle: &Path) -> Result<Vec<(String, ChartSpec)>> {
    let manifest = BundleManifest::read(bundle)?;
    let metric_cols: Vec<String> = Metric::ALL.iter().map(|m| m.as_str().to_string()).collect();
    let mut out = Vec::new();
    for protocol in &manifest.protocols {
        let (prefix, name_prefix) = if protocol == "fold_safe" {
            ("fold_safe/", "fold_safe_")
        } else {
            ("", "")
        };
        for ds in &manifest.datasets {
            for clf in &manifest.classifiers {
                out.push((
                    format!("{name_prefix}means_{}_{}", slug(ds), slug(clf)),
                    ChartSpec {
                        kind: ChartKind::GroupedBar {
                            group_column: "subset".into(),
                            series: metric_cols.clone(),
                        },
                        title: format!("Mean fold metrics: {ds} / {clf}"),
                        data: format!("{prefix}means.csv"),
                        filter: vec![("dataset".into(), ds.clone()), ("classifier".into(), clf.clone())],
                        caption: Some(format!("protocol: {protocol}")),
                    },
                ));
            }
        }
        out.push((
            format!("{name_prefix}wins"),
            ChartSpec {
                kind: ChartKind::GroupedBar {
                    group_column: "subset".into(),
                    series: manifest.classifiers.clone(),
                },
                title: "Wins per feature subset".into(),
                data: format!("{prefix}wins.csv"),
                filter: Vec::new(),
                caption: Some(format!("Unit: {WIN_UNIT}.")),
            },
        ));
        for a in &manifest.artifacts {
            let Some(rest) = a.path.strip_prefix(prefix) else {
                continue;
            };
            let name = stem(&a.path);
            let (kind, dir, title) = if rest.starts_with("significance/") {
                (ChartKind::BooleanMatrix, "significance", "Bonferroni-significant pairs")
            } else if rest.starts_with("roc/") {
                (ChartKind::Roc, "roc", "Out-of-fold ROC")
            } else if rest.starts_with("importance/") && !name.ends_with("_folds") {
                (ChartKind::ImportanceBar, "importance", "Top features")
            } else {
                continue;
            };
            out.push((
                format!("{name_prefix}{dir}_{name}"),
                ChartSpec {
                    kind,
                    title: format!("{title}: {name}"),
                    data: a.path.clone(),
                    filter: Vec::new(),
                    caption: None,
                },
            ));
        }
    }
    for a in &manifest.artifacts {
        if a.path.starts_with("tsne/") {
            let name = stem(&a.path);
            out.push((
                format!("tsne_{name}"),
                ChartSpec {
                    kind: ChartKind::Scatter2d,
                    title: format!("t-SNE projection: {name}"),
                    data: a.path.clone(),
                    filter: Vec::new(),
                    caption: None,
                },
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn spec(kind: ChartKind, data: &str) -> ChartSpec {
        ChartSpec {
            kind,
            title: "t".into(),
            data: data.into(),
            filter: Vec::new(),
            caption: None,
        }
    }

    #[test]
    fn grouped_bar_draws_one_rect_per_value() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.csv"), "g,a,b\nx,0.5,0.25\ny,1,0\nz,0.1,0.2\n").unwrap();
        let s = spec(
            ChartKind::GroupedBar {
                group_column: "g".into(),
                series: vec!["a".into(), "b".into()],
            },
            "m.csv",
        );
        let svg = render_svg(&s, dir.path()).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 6);
        assert_eq!(svg, render_svg(&s, dir.path()).unwrap());
    }

    #[test]
    fn boolean_matrix_marks_significant_cells_dark() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.csv"), "subset,A,B\nA,0,1\nB,1,0\n").unwrap();
        let svg = render_svg(&spec(ChartKind::BooleanMatrix, "s.csv"), dir.path()).unwrap();
        assert_eq!(svg.matches(r##"fill="#222222"/>"##).count(), 2 + 1);
        assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
    }

    #[test]
    fn missing_file_or_rows_is_missing_data() {
        let dir = tempfile::tempdir().unwrap();
        let err = render_svg(&spec(ChartKind::Roc, "nope.csv"), dir.path()).unwrap_err();
        assert!(matches!(err, ReportError::MissingData(_)));
        fs::write(dir.path().join("r.csv"), "subset,class,fpr,tpr\n").unwrap();
        let err = render_svg(&spec(ChartKind::Roc, "r.csv"), dir.path()).unwrap_err();
        assert!(matches!(err, ReportError::MissingData(_)));
    }

    #[test]
    fn scatter_and_importance_render() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("t.csv"), "x,y,class_index\n0,0,0\n1,2,1\n").unwrap();
        let svg = render_svg(&spec(ChartKind::Scatter2d, "t.csv"), dir.path()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        fs::write(dir.path().join("i.csv"), "rank,feature,score\n1,a<b,0.7\n2,c,0.3\n").unwrap();
        let svg = render_svg(&spec(ChartKind::ImportanceBar, "i.csv"), dir.path()).unwrap();
        assert!(svg.contains("a&lt;b"));
    }
}
