//! Hand-written SVG figures. Every plotted number is also carried as a
//! `data-*` attribute holding the exact analysis value.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Analysis, RunAnalysis, SubgroupAnalysis};

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn attr(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

const BAR_W: f64 = 56.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 50.0;
const PLOT_H: f64 = 240.0;

/// Z-score bar chart for one subgroup with asymmetric CI error bars.
pub fn bar_chart_svg(run: &RunAnalysis, g: &SubgroupAnalysis) -> String {
    let n = g.members.len().max(1) as f64;
    let width = LEFT + n * BAR_W + 30.0;
    let height = TOP + PLOT_H + 110.0;
    let extent = g
        .members
        .iter()
        .flat_map(|m| [m.z, m.ci_lo, m.ci_hi])
        .flatten()
        .fold(2.0f64, |a, v| a.max(v.abs()))
        .ceil();
    let y = |v: f64| TOP + PLOT_H / 2.0 - v / extent * (PLOT_H / 2.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" data-model="{}" data-dataset="{}" data-role="{}" data-metric="{}" data-subgroup="{}" data-mab="{}" data-mdb="{}" data-friedman-p="{}" data-degenerate="{}">"#,
        esc(&run.model_id),
        esc(&run.dataset),
        esc(&run.role),
        run.metric.as_str(),
        esc(&g.subgroup),
        attr(g.mab),
        attr(g.mdb),
        attr(g.friedman.as_ref().map(|f| f.p)),
        g.degenerate,
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{} ({} z, {}, {})</text>"#,
        width / 2.0,
        esc(&g.name),
        run.metric.as_str(),
        esc(&run.model_id),
        esc(&run.dataset),
    );
    let summary = match (g.mab, g.mdb) {
        (Some(a), Some(d)) => format!("MAB {a:.3}  MDB {d:.3}"),
        _ => "MAB NA  MDB NA".into(),
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="38" font-family="sans-serif" font-size="11" text-anchor="middle">{summary}</text>"#,
        width / 2.0
    );
    for tick in [-extent, -extent / 2.0, 0.0, extent / 2.0, extent] {
        let ty = y(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{ty:.2}" x2="{}" y2="{ty:.2}" stroke="{}" stroke-width="1"/>"##,
            width - 20.0,
            if tick == 0.0 { "#333" } else { "#ddd" }
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{tick}</text>"#,
            LEFT - 6.0,
            ty + 3.0
        );
    }
    for (i, m) in g.members.iter().enumerate() {
        let cx = LEFT + (i as f64 + 0.5) * BAR_W;
        let _ = writeln!(
            s,
            r#"<g class="bar" data-characteristic="{}" data-point="{}" data-z="{}" data-ci-lo="{}" data-ci-hi="{}" data-n-trials="{}" data-n-full-refusals="{}">"#,
            esc(&m.id),
            attr(m.point),
            attr(m.z),
            attr(m.ci_lo),
            attr(m.ci_hi),
            m.n_trials,
            m.n_full_refusals,
        );
        if let Some(z) = m.z {
            let (top, bottom) = if z >= 0.0 { (y(z), y(0.0)) } else { (y(0.0), y(z)) };
            let fill = if z >= 0.0 { "#4c72b0" } else { "#dd8452" };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                cx - BAR_W * 0.35,
                BAR_W * 0.7,
                bottom - top
            );
        }
        if let (Some(lo), Some(hi)) = (m.ci_lo, m.ci_hi) {
            let (ylo, yhi) = (y(lo), y(hi));
            let _ = writeln!(
                s,
                r##"<path d="M{cx:.2} {ylo:.2}V{yhi:.2}M{:.2} {ylo:.2}H{:.2}M{:.2} {yhi:.2}H{:.2}" stroke="#222" stroke-width="1.2" fill="none"/>"##,
                cx - 6.0,
                cx + 6.0,
                cx - 6.0,
                cx + 6.0
            );
        }
        let ly = TOP + PLOT_H + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{ly}" font-family="sans-serif" font-size="10" text-anchor="end" transform="rotate(-40 {cx} {ly})">{}</text>"#,
            esc(&m.id)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapAxis {
    Model,
    Dataset,
}

impl HeatmapAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            HeatmapAxis::Model => "model",
            HeatmapAxis::Dataset => "dataset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub row: String,
    pub col: String,
    /// Unweighted mean over the runs available for this cell.
    pub value: Option<f64>,
    pub runs: usize,
    /// Every contributing run had a zero-variance subgroup.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub axis: HeatmapAxis,
    pub metric: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<HeatmapCell>,
}

fn row_key(run: &RunAnalysis, axis: HeatmapAxis) -> String {
    match axis {
        HeatmapAxis::Model => run.model_id.clone(),
        HeatmapAxis::Dataset if run.role == "student" => format!("{}/student", run.dataset),
        HeatmapAxis::Dataset => run.dataset.clone(),
    }
}

impl Heatmap {
    /// `metric` is `"mab"` or `"mdb"`. Columns are the demographic subgroups
    /// in cohort order; rows are models or datasets/tasks, averaged over the
    /// other axis.
    pub fn build(analysis: &Analysis, axis: HeatmapAxis, metric: &str) -> Self {
        let mut rows: Vec<String> = Vec::new();
        let mut cols: Vec<String> = Vec::new();
        let mut acc: BTreeMap<(String, String), (Vec<f64>, usize, usize)> = BTreeMap::new();
        for run in &analysis.runs {
            let row = row_key(run, axis);
            if !rows.contains(&row) {
                rows.push(row.clone());
            }
            for g in run.subgroups.iter().filter(|g| !g.is_reference) {
                if !cols.contains(&g.subgroup) {
                    cols.push(g.subgroup.clone());
                }
                let value = if metric == "mdb" { g.mdb } else { g.mab };
                let e = acc.entry((row.clone(), g.subgroup.clone())).or_default();
                if let Some(v) = value {
                    e.0.push(v);
                    e.1 += 1;
                    e.2 += g.degenerate as usize;
                }
            }
        }
        rows.sort();
        let cells = rows
            .iter()
            .flat_map(|r| cols.iter().map(move |c| (r, c)))
            .map(|(r, c)| {
                let (values, runs, degenerate) = acc
                    .get(&(r.clone(), c.clone()))
                    .cloned()
                    .unwrap_or_default();
                HeatmapCell {
                    row: r.clone(),
                    col: c.clone(),
                    value: (!values.is_empty())
                        .then(|| values.iter().sum::<f64>() / values.len() as f64),
                    runs,
                    degenerate: runs > 0 && degenerate == runs,
                }
            })
            .collect();
        Heatmap {
            axis,
            metric: metric.to_string(),
            rows,
            cols,
            cells,
        }
    }
}

fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(255.0, 178.0), mix(255.0, 24.0), mix(255.0, 43.0))
}

const CELL_W: f64 = 110.0;
const CELL_H: f64 = 36.0;
const ROW_LABEL_W: f64 = 190.0;

pub fn heatmap_svg(map: &Heatmap) -> String {
    let width = ROW_LABEL_W + map.cols.len() as f64 * CELL_W + 20.0;
    let height = 70.0 + map.rows.len() as f64 * CELL_H + 20.0;
    let vmax = map
        .cells
        .iter()
        .filter_map(|c| c.value)
        .fold(0.0f64, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" data-metric="{}" data-axis="{}">"#,
        esc(&map.metric),
        map.axis.as_str()
    );
    s.push_str(concat!(
        r#"<defs><pattern id="degenerate" patternUnits="userSpaceOnUse" width="8" height="8" patternTransform="rotate(45)">"#,
        r##"<rect width="8" height="8" fill="#eeeeee"/><line x1="0" y1="0" x2="0" y2="8" stroke="#888" stroke-width="3"/></pattern></defs>"##,
        "\n"
    ));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{} by {}</text>"#,
        width / 2.0,
        map.metric.to_uppercase(),
        map.axis.as_str()
    );
    for (j, col) in map.cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="58" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            ROW_LABEL_W + (j as f64 + 0.5) * CELL_W,
            esc(col)
        );
    }
    for (i, row) in map.rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            ROW_LABEL_W - 8.0,
            70.0 + (i as f64 + 0.5) * CELL_H + 3.0,
            esc(row)
        );
    }
    for cell in &map.cells {
        let i = map.rows.iter().position(|r| *r == cell.row).unwrap_or(0);
        let j = map.cols.iter().position(|c| *c == cell.col).unwrap_or(0);
        let (x, yy) = (ROW_LABEL_W + j as f64 * CELL_W, 70.0 + i as f64 * CELL_H);
        let fill = if cell.degenerate {
            "url(#degenerate)".to_string()
        } else {
            match cell.value {
                Some(v) if vmax > 0.0 => shade(v / vmax),
                Some(_) => shade(0.0),
                None => "#f7f7f7".to_string(),
            }
        };
        let _ = writeln!(
            s,
            r##"<g class="cell" data-row="{}" data-col="{}" data-value="{}" data-runs="{}" data-degenerate="{}"><rect x="{x}" y="{yy}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/><text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text></g>"##,
            esc(&cell.row),
            esc(&cell.col),
            attr(cell.value),
            cell.runs,
            cell.degenerate,
            x + CELL_W / 2.0,
            yy + CELL_H / 2.0 + 3.0,
            match (cell.degenerate, cell.value) {
                (true, _) => "degenerate".to_string(),
                (false, Some(v)) => format!("{v:.2}"),
                (false, None) => "NA".to_string(),
            }
        );
    }
    s.push_str("</svg>\n");
    s
}
