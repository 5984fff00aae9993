use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ResultTable, PLOTS_DIR, TABLES_DIR};
use crate::error::{Error, Result};

/// Fixed precision shared by the markdown and CSV emitters.
fn num(v: Option<f64>, missing: &str) -> String {
    v.map_or_else(|| missing.to_string(), |x| format!("{x:.4}"))
}

fn status(row: &super::ResultRow) -> String {
    match &row.error {
        Some(e) if row.seeds_completed == 0 => format!("failed: {e}"),
        Some(e) => format!("partial: {e}"),
        None => "ok".into(),
    }
}

pub fn markdown_table(t: &ResultTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## {} analog: {}\n", t.axis.label(), t.title);
    let _ = writeln!(s, "_{}_\n", t.note);
    let _ = writeln!(s, "| Cell | DSC↑ (%) | DSC std | HD↓ ({}) | HD std | Params | Seeds | Runs | Config hash | Status |", t.hd_unit);
    let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|---:|---|---|");
    for r in &t.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | `{}` | {} |",
            r.cell,
            num(r.dsc_mean, "n/a"),
            num(r.dsc_std, "n/a"),
            num(r.hd_mean, "n/a"),
            num(r.hd_std, "n/a"),
            r.param_count,
            r.seeds_completed,
            r.seeds_total,
            r.config_hash,
            status(r).replace('|', "\\|").replace('\n', " "),
        );
    }
    let _ = writeln!(s, "\nTotal run time {:.0} s.", t.runtime_secs);
    s
}

pub const CSV_HEADER: [&str; 10] =
    ["cell", "dsc_mean", "dsc_std", "hd_mean", "hd_std", "params", "seeds_completed", "seeds_total", "config_hash", "status"];

pub fn csv_table(t: &ResultTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &t.rows {
        w.write_record([
            r.cell.clone(),
            num(r.dsc_mean, ""),
            num(r.dsc_std, ""),
            num(r.hd_mean, ""),
            num(r.hd_std, ""),
            r.param_count.to_string(),
            r.seeds_completed.to_string(),
            r.seeds_total.to_string(),
            r.config_hash.clone(),
            status(r),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two panels: DSC bars and an HD line, one x position per cell, with
/// ±1 std whiskers when available.
pub fn svg_chart(t: &ResultTable) -> String {
    const W: f64 = 820.0;
    const H: f64 = 360.0;
    const TOP: f64 = 56.0;
    const BOTTOM: f64 = 300.0;
    let n = t.rows.len().max(1) as f64;
    let panels = [(60.0, 390.0), (470.0, 800.0)];
    let x_of = |(l, r): (f64, f64), i: usize| l + (r - l) * (i as f64 + 0.5) / n;
    let hd_max = t
        .rows
        .iter()
        .filter_map(|r| r.hd_mean.map(|m| m + r.hd_std.unwrap_or(0.0)))
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let y_dsc = |v: f64| BOTTOM - (BOTTOM - TOP) * v.clamp(0.0, 100.0) / 100.0;
    let y_hd = |v: f64| BOTTOM - (BOTTOM - TOP) * (v / hd_max).clamp(0.0, 1.0);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} analog: {}</text>"#, W / 2.0, t.axis.label(), esc(&t.title));
    let _ = writeln!(s, r##"<text x="{}" y="38" text-anchor="middle" fill="#a33">{}</text>"##, W / 2.0, esc(&t.note));
    let titles = ["DSC ↑ (%)".to_string(), format!("HD ↓ ({})", esc(&t.hd_unit))];
    for (p, ((l, r), title)) in panels.iter().zip(&titles).enumerate() {
        let _ = writeln!(s, r#"<line x1="{l}" y1="{BOTTOM}" x2="{r}" y2="{BOTTOM}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<line x1="{l}" y1="{TOP}" x2="{l}" y2="{BOTTOM}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#, (l + r) / 2.0, TOP - 6.0);
        for k in 0..=4 {
            let frac = k as f64 / 4.0;
            let y = BOTTOM - (BOTTOM - TOP) * frac;
            let v = if p == 0 { 100.0 * frac } else { hd_max * frac };
            let _ = writeln!(s, r##"<line x1="{}" y1="{y}" x2="{r}" y2="{y}" stroke="#ddd"/>"##, l);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, l - 4.0, y + 4.0);
        }
        for (i, row) in t.rows.iter().enumerate() {
            let x = x_of((*l, *r), i);
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="end" transform="rotate(-30 {x} {})">{}</text>"#,
                BOTTOM + 14.0,
                BOTTOM + 14.0,
                esc(&row.cell)
            );
        }
    }
    let bar = (panels[0].1 - panels[0].0) / n * 0.6;
    for (i, row) in t.rows.iter().enumerate() {
        let x = x_of(panels[0], i);
        match row.dsc_mean {
            Some(m) => {
                let y = y_dsc(m);
                let _ = writeln!(s, r##"<rect x="{}" y="{y}" width="{bar}" height="{}" fill="#4a7ab5"/>"##, x - bar / 2.0, BOTTOM - y);
                if let Some(sd) = row.dsc_std {
                    let _ = writeln!(s, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#, y_dsc(m - sd), y_dsc(m + sd));
                }
            }
            None => {
                let _ = writeln!(s, r##"<text x="{x}" y="{}" text-anchor="middle" fill="#a33">failed</text>"##, BOTTOM - 6.0);
            }
        }
    }
    let points: Vec<(f64, f64, Option<f64>)> =
        t.rows.iter().enumerate().filter_map(|(i, r)| r.hd_mean.map(|m| (x_of(panels[1], i), m, r.hd_std))).collect();
    if points.len() > 1 {
        let path: Vec<String> = points.iter().map(|(x, m, _)| format!("{x},{}", y_hd(*m))).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c0504d" stroke-width="2"/>"##, path.join(" "));
    }
    for (x, m, sd) in &points {
        let _ = writeln!(s, r##"<circle cx="{x}" cy="{}" r="4" fill="#c0504d"/>"##, y_hd(*m));
        if let Some(sd) = sd {
            let _ = writeln!(s, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#, y_hd(m - sd), y_hd(m + sd));
        }
    }
    s.push_str("</svg>\n");
    s
}

pub struct OutputPaths {
    pub json: PathBuf,
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

impl OutputPaths {
    pub fn all(&self) -> [&Path; 4] {
        [&self.json, &self.markdown, &self.csv, &self.svg]
    }
}

/// Writes `tables/<axis>.{json,md,csv}` and `plots/<axis>.svg` under `out`.
pub fn write_outputs(t: &ResultTable, out: &Path) -> Result<OutputPaths> {
    let tables = out.join(TABLES_DIR);
    let plots = out.join(PLOTS_DIR);
    for d in [&tables, &plots] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let label = t.axis.label();
    let paths = OutputPaths {
        json: tables.join(format!("{label}.json")),
        markdown: tables.join(format!("{label}.md")),
        csv: tables.join(format!("{label}.csv")),
        svg: plots.join(format!("{label}.svg")),
    };
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));
    write(&paths.json, serde_json::to_string_pretty(t)?)?;
    write(&paths.markdown, markdown_table(t))?;
    write(&paths.csv, csv_table(t)?)?;
    write(&paths.svg, svg_chart(t))?;
    Ok(paths)
}
