//! Static SVG charts and markdown tables from aggregated study results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::Correlation;
use crate::error::{Error, Result};
use crate::experiment::{AggregateTable, RunAnalysis, StudySummary};
use crate::latent::Attribute;
use crate::scenegen::Subset;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 42.0;
const TITLE_H: f64 = 28.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One point with a symmetric error bar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PanelKind {
    Line,
    Scatter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub kind: PanelKind,
    pub series: Vec<Series>,
    /// Draw a dashed reference line at y = 0.
    pub zero_line: bool,
    pub note: Option<String>,
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>, pad_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if pad_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn draw_panel(out: &mut String, p: &Panel, ox: f64, oy: f64) {
    let pts = || p.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(pts().map(|q| q.x), false);
    let (y0, y1) = bounds(pts().flat_map(|q| [q.y - q.err, q.y + q.err]), p.zero_line);
    let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let sx = |x: f64| ox + MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let _ = writeln!(out, r#"<g>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        ox + PANEL_W / 2.0,
        oy + 18.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        ox + MARGIN_L,
        oy + MARGIN_T
    );
    for i in 0..=4 {
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            ox + MARGIN_L - 4.0,
            sy(fy) + 3.0,
            fmt_num(fy)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            sx(fx),
            oy + PANEL_H - MARGIN_B + 14.0,
            fmt_num(fx)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
        ox + MARGIN_L + pw / 2.0,
        oy + PANEL_H - 8.0,
        escape(&p.x_label)
    );
    let (lx, ly) = (ox + 12.0, oy + MARGIN_T + ph / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" font-size="11" transform="rotate(-90 {lx:.1} {ly:.1})">{}</text>"#,
        escape(&p.y_label)
    );
    if p.zero_line {
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
            ox + MARGIN_L,
            sy(0.0),
            ox + MARGIN_L + pw,
            sy(0.0)
        );
    }
    for (i, s) in p.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if p.kind == PanelKind::Line && s.points.len() > 1 {
            let path: Vec<String> = s.points.iter().map(|q| format!("{:.1},{:.1}", sx(q.x), sy(q.y))).collect();
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        }
        for q in &s.points {
            if q.err > 0.0 {
                let _ = writeln!(
                    out,
                    r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}"/>"#,
                    sx(q.x),
                    sy(q.y - q.err),
                    sy(q.y + q.err)
                );
            }
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(q.x), sy(q.y));
        }
        if p.series.len() > 1 {
            let (tx, ty) = (ox + MARGIN_L + 6.0, oy + MARGIN_T + 12.0 + 12.0 * i as f64);
            let _ = writeln!(
                out,
                r#"<text x="{tx:.1}" y="{ty:.1}" font-size="10" fill="{color}">{}</text>"#,
                escape(&s.name)
            );
        }
    }
    if let Some(note) = &p.note {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            ox + MARGIN_L + pw - 4.0,
            oy + MARGIN_T + 12.0,
            escape(note)
        );
    }
    let _ = writeln!(out, "</g>");
}

/// Renders panels on a grid with `cols` columns. Output bytes depend only on the input.
pub fn render_svg(title: &str, panels: &[Panel], cols: usize) -> String {
    let cols = cols.clamp(1, panels.len().max(1));
    let rows = panels.len().div_ceil(cols).max(1);
    let (w, h) = (PANEL_W * cols as f64, TITLE_H + PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="19" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL_W * (i % cols) as f64, TITLE_H + PANEL_H * (i / cols) as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn eval_splits() -> [Subset; 2] {
    [Subset::TestId, Subset::TestOod]
}

/// One panel per attribute with ID and OOD accuracy against the sweep value.
pub fn accuracy_panels(table: &AggregateTable) -> Vec<Panel> {
    Attribute::ALL
        .iter()
        .map(|&attribute| Panel {
            title: attribute.label().to_string(),
            x_label: table.axis.clone(),
            y_label: "accuracy".into(),
            kind: PanelKind::Line,
            series: eval_splits()
                .iter()
                .map(|&split| Series {
                    name: split.to_string(),
                    points: table
                        .values()
                        .into_iter()
                        .filter_map(|v| table.get(v, attribute, split))
                        .map(|r| Point { x: r.value, y: r.mean, err: r.stderr })
                        .collect(),
                })
                .collect(),
            zero_line: false,
            note: None,
        })
        .collect()
}

/// Like [`accuracy_panels`] but relative to the cell whose sweep value is 0.
/// Returns `None` when there is no baseline cell.
pub fn delta_panels(table: &AggregateTable) -> Option<Vec<Panel>> {
    let values = table.values();
    let base = *values.iter().find(|&&v| v == 0.0)?;
    Some(
        Attribute::ALL
            .iter()
            .map(|&attribute| Panel {
                title: attribute.label().to_string(),
                x_label: table.axis.clone(),
                y_label: format!("Δaccuracy vs {} = 0", table.axis),
                kind: PanelKind::Line,
                series: eval_splits()
                    .iter()
                    .map(|&split| Series {
                        name: split.to_string(),
                        points: table.get(base, attribute, split).map_or_else(Vec::new, |b| {
                            values
                                .iter()
                                .filter_map(|&v| table.get(v, attribute, split))
                                .map(|r| Point { x: r.value, y: r.mean - b.mean, err: r.stderr })
                                .collect()
                        }),
                    })
                    .collect(),
                zero_line: true,
                note: None,
            })
            .collect(),
    )
}

fn corr_note(c: Option<&Correlation>) -> Option<String> {
    c.map(|c| format!("r = {:.2}, p = {:.2e}, n = {}", c.r, c.p_value, c.n))
}

/// Scatter of one per-run quantity against another.
pub fn scatter_panel(
    runs: &[RunAnalysis],
    title: &str,
    x_label: &str,
    y_label: &str,
    x: impl Fn(&RunAnalysis) -> Option<f64>,
    y: impl Fn(&RunAnalysis) -> Option<f64>,
    corr: Option<&Correlation>,
) -> Panel {
    let points = runs.iter().filter_map(|r| Some(Point { x: x(r)?, y: y(r)?, err: 0.0 })).collect();
    Panel {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        kind: PanelKind::Scatter,
        series: vec![Series { name: "runs".into(), points }],
        zero_line: false,
        note: corr_note(corr),
    }
}

/// Markdown accuracy and metric tables plus correlations.
pub fn markdown(summary: &StudySummary) -> String {
    let t = &summary.table;
    let mut out = format!("# Results by {}\n\n", t.axis);
    out.push_str(&format!("| {} | attribute | test_id | test_ood | seeds |\n|---|---|---|---|---|\n", t.axis));
    for v in t.values() {
        for a in Attribute::ALL {
            let cell = |s| t.get(v, a, s).map_or("".into(), |r| format!("{:.3} ± {:.3}", r.mean, r.stderr));
            let seeds = eval_splits().iter().filter_map(|&s| t.get(v, a, s)).map(|r| r.seeds).max().unwrap_or(0);
            out.push_str(&format!("| {} | {} | {} | {} | {} |\n", fmt_num(v), a, cell(Subset::TestId), cell(Subset::TestOod), seeds));
        }
    }
    if !t.metrics.is_empty() {
        out.push_str(&format!("\n| {} | metric | mean ± stderr | seeds |\n|---|---|---|---|\n", t.axis));
        for r in &t.metrics {
            out.push_str(&format!("| {} | {} | {:.4} ± {:.4} | {} |\n", fmt_num(r.value), r.metric, r.mean, r.stderr, r.seeds));
        }
    }
    out.push_str("\n| pair | r | p | n |\n|---|---|---|---|\n");
    let c = &summary.correlations;
    for (name, v) in [
        ("p-score vs OOD shape accuracy", &c.pscore_vs_ood_shape),
        ("NMI vs OOD shape accuracy", &c.nmi_vs_ood_shape),
        ("NMI vs p-score", &c.nmi_vs_pscore),
    ] {
        match v {
            Some(c) => out.push_str(&format!("| {name} | {:.3} | {:.3e} | {} |\n", c.r, c.p_value, c.n)),
            None => out.push_str(&format!("| {name} | n/a | n/a | 0 |\n")),
        }
    }
    if !summary.failures.is_empty() {
        out.push_str("\n## Runs not analyzed\n\n");
        for (dir, reason) in &summary.failures {
            out.push_str(&format!("- `{}`: {reason}\n", dir.display()));
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes the charts and tables for `summary` into `out_dir`.
/// An empty table writes nothing and returns a warning.
pub fn write_report(summary: &StudySummary, out_dir: &Path) -> Result<ReportOutput> {
    let mut report = ReportOutput::default();
    if summary.table.is_empty() {
        report.warnings.push("aggregate table is empty, nothing to report".into());
        return Ok(report);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut emit = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        report.files.push(path);
        Ok(())
    };
    let t = &summary.table;
    let axis = t.axis.as_str();
    emit(&format!("accuracy_vs_{axis}.svg"), render_svg(&format!("Accuracy versus {axis}"), &accuracy_panels(t), 2))?;
    let mut warnings = Vec::new();
    if matches!(axis, "p_burst" | "jitter") {
        match delta_panels(t) {
            Some(panels) => emit(&format!("delta_accuracy_vs_{axis}.svg"), render_svg(&format!("Change of accuracy versus {axis}"), &panels, 2))?,
            None => warnings.push(format!("no {axis} = 0 cell, skipping the Δaccuracy chart")),
        }
    }

    let runs = &summary.runs;
    let c = &summary.correlations;
    let ps = |r: &RunAnalysis| r.pscore.as_ref().map(|p| p.mean);
    let ood = |r: &RunAnalysis| r.ood_shape_accuracy();
    let nm = |r: &RunAnalysis| r.nmi;
    let scatters = [
        scatter_panel(runs, "NMI vs OOD shape accuracy", "train NMI(color, shape)", "OOD shape accuracy", nm, ood, c.nmi_vs_ood_shape.as_ref()),
        scatter_panel(runs, "p-score vs OOD shape accuracy", "p-score", "OOD shape accuracy", ps, ood, c.pscore_vs_ood_shape.as_ref()),
        scatter_panel(runs, "NMI vs p-score", "train NMI(color, shape)", "p-score", nm, ps, c.nmi_vs_pscore.as_ref()),
    ];
    for (name, panel) in ["nmi_vs_ood.svg", "pscore_vs_ood.svg", "nmi_vs_pscore.svg"].iter().zip(scatters) {
        if panel.series[0].points.len() < 2 {
            warnings.push(format!("fewer than 2 runs for {name}, skipped"));
            continue;
        }
        emit(name, render_svg(&panel.title.clone(), &[panel], 1))?;
    }
    emit("tables.md", markdown(summary))?;
    emit(&format!("aggregate_{axis}.csv"), t.to_csv())?;
    report.warnings.extend(warnings);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::AggregateRow;

    fn table(axis: &str, values: &[f64]) -> AggregateTable {
        let mut rows = Vec::new();
        for &v in values {
            for a in Attribute::ALL {
                for (k, s) in eval_splits().into_iter().enumerate() {
                    rows.push(AggregateRow { value: v, attribute: a, split: s, mean: 0.2 + 0.1 * k as f64 + v / 1000.0, stderr: 0.01, seeds: 3 });
                }
            }
        }
        AggregateTable { axis: axis.into(), rows, metrics: vec![] }
    }

    fn summary(t: AggregateTable) -> StudySummary {
        StudySummary { table: t, ..Default::default() }
    }

    #[test]
    fn diversity_chart_has_four_panels_and_is_deterministic() {
        let t = table("n_colors", &[8.0, 64.0, 216.0]);
        let a = render_svg("x", &accuracy_panels(&t), 2);
        assert_eq!(a, render_svg("x", &accuracy_panels(&t), 2));
        assert_eq!(a.matches("<g>").count(), 4);
        assert_eq!(a.matches("<polyline").count(), 8);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    }

    #[test]
    fn delta_is_relative_to_the_zero_cell() {
        let t = table("p_burst", &[0.0, 0.5, 1.0]);
        let panels = delta_panels(&t).unwrap();
        let pts = &panels[0].series[1].points;
        assert_eq!(pts[0].y, 0.0);
        assert!((pts[2].y - 0.001).abs() < 1e-12);
        assert!(delta_panels(&table("p_burst", &[0.5, 1.0])).is_none());
    }

    #[test]
    fn empty_table_is_a_noop_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_report(&summary(AggregateTable::default()), &dir.path().join("r")).unwrap();
        assert!(out.files.is_empty());
        assert_eq!(out.warnings.len(), 1);
        assert!(!dir.path().join("r").exists());
    }

    #[test]
    fn report_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_report(&summary(table("jitter", &[0.0, 0.5])), dir.path()).unwrap();
        let names: Vec<String> = out.files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["accuracy_vs_jitter.svg", "delta_accuracy_vs_jitter.svg", "tables.md", "aggregate_jitter.csv"]);
        let md = fs::read_to_string(dir.path().join("tables.md")).unwrap();
        assert!(md.contains("| 0.5 | shape | 0.201 ± 0.010 | 0.301 ± 0.010 | 3 |"), "{md}");
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b&c"), "a&lt;b&amp;c");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(-0.0001), "0");
        assert_eq!(fmt_num(216.0), "216");
    }
}
