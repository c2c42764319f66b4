use std::fmt::Write as _;
use std::path::Path;

use super::{EvalError, Result};

pub const TABLE_HEADER: &str = "networks,ddqn_top1,ddqn_top10,grpo_top1,grpo_top10";
pub const TABLE_ROWS: [&str; 5] = ["MLP", "LSTM", "Transformer", "LSTM-no-LLM", "Transformer-no-LLM"];

/// One table row; cells are DDQN top-1, DDQN top-10, GRPO top-1, GRPO
/// top-10. `None` renders as an empty cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub network: String,
    pub cells: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedCurve {
    pub name: String,
    /// `(ts, equity)` points.
    pub points: Vec<(i64, f64)>,
}

/// Inputs for the report directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// Mean sampled-period returns in USDT.
    pub table1: Vec<ReportRow>,
    /// Full-backtest returns in percent.
    pub table2: Vec<ReportRow>,
    pub curves: Vec<NamedCurve>,
    /// Buy-and-hold equity over the test period.
    pub baseline: Vec<(i64, f64)>,
    pub initial_equity: f64,
    pub baseline_pct: f64,
    pub notes: Vec<String>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

fn table_csv(rows: &[ReportRow], digits: usize) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.cells.iter().map(|c| cell(*c, digits)).collect();
        let _ = writeln!(s, "{},{}", r.network, cells.join(","));
    }
    s
}

fn table_md(rows: &[ReportRow], digits: usize) -> String {
    let mut s = String::from("| Networks | DDQN Top1 | DDQN Top10 | GRPO Top1 | GRPO Top10 |\n|---|---:|---:|---:|---:|\n");
    for r in rows {
        let cells: Vec<String> = r.cells.iter().map(|c| cell(*c, digits)).collect();
        let _ = writeln!(s, "| {} | {} |", r.network, cells.join(" | "));
    }
    s
}

fn curve_csv(c: &NamedCurve, initial: f64) -> String {
    let mut s = String::from("ts,equity_usdt,return_pct\n");
    for &(ts, eq) in &c.points {
        let _ = writeln!(s, "{ts},{eq:.6},{:.6}", (eq / initial - 1.0) * 100.0);
    }
    s
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];

fn svg(report: &Report) -> String {
    let (w, h) = (960.0, 540.0);
    let (left, right, top, bottom) = (80.0, 80.0, 40.0, 60.0);
    let all = report.curves.iter().flat_map(|c| c.points.iter()).chain(report.baseline.iter());
    let (mut t0, mut t1, mut lo, mut hi) = (i64::MAX, i64::MIN, f64::INFINITY, f64::NEG_INFINITY);
    for &(ts, eq) in all {
        t0 = t0.min(ts);
        t1 = t1.max(ts);
        lo = lo.min(eq);
        hi = hi.max(eq);
    }
    if t0 > t1 {
        (t0, t1, lo, hi) = (0, 1, report.initial_equity - 1.0, report.initial_equity + 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let span_t = (t1 - t0).max(1) as f64;
    let px = |ts: i64| left + (ts - t0) as f64 / span_t * (w - left - right);
    let py = |eq: f64| top + (hi - eq) / (hi - lo) * (h - top - bottom);
    let poly = |pts: &[(i64, f64)]| {
        pts.iter()
            .map(|&(t, e)| format!("{:.2},{:.2}", px(t), py(e)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, top, h - bottom);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for k in 0..=5 {
        let eq = lo + (hi - lo) * f64::from(k) / 5.0;
        let y = py(eq);
        let pct = (eq / report.initial_equity - 1.0) * 100.0;
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#eeeeee"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{eq:.1}</text>"#, x0 - 6.0, y + 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="start">{pct:.1}%</text>"#, x1 + 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="20" y="{:.2}" transform="rotate(-90 20 {:.2})" text-anchor="middle">Equity (USDT)</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" transform="rotate(90 {:.2} {:.2})" text-anchor="middle">Return (%)</text>"#, w - 20.0, (y0 + y1) / 2.0, w - 20.0, (y0 + y1) / 2.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Test period (minutes from start: 0 to {})</text>"#, (x0 + x1) / 2.0, h - 20.0, (t1 - t0) / 60_000);
    if !report.baseline.is_empty() {
        let _ = writeln!(
            s,
            r##"<polyline class="baseline" fill="none" stroke="#999999" stroke-width="1.5" points="{}"/>"##,
            poly(&report.baseline)
        );
    }
    for (i, c) in report.curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-name="{}" fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            c.name,
            poly(&c.points)
        );
    }
    let mut ly = y0 + 14.0;
    let _ = writeln!(s, r##"<text x="{:.2}" y="{ly:.2}" fill="#999999">BTC buy and hold</text>"##, x0 + 8.0);
    for (i, c) in report.curves.iter().enumerate() {
        ly += 14.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}" fill="{}">{}</text>"#, x0 + 8.0, PALETTE[i % PALETTE.len()], c.name);
    }
    s.push_str("</svg>\n");
    s
}

fn summary(report: &Report) -> String {
    let mut s = String::from("# Backtest report\n\n## Mean sampled-period return (USDT)\n\n");
    s.push_str(&table_md(&report.table1, 2));
    s.push_str("\n## Full test-period return (%)\n\n");
    s.push_str(&table_md(&report.table2, 2));
    let _ = write!(
        s,
        "\nBuy-and-hold baseline over the test period: {:.2}%\n\n## Curves\n\n",
        report.baseline_pct * 100.0
    );
    for c in &report.curves {
        let last = c.points.last().map_or(report.initial_equity, |p| p.1);
        let _ = writeln!(
            s,
            "- `{}`: final equity {:.2} USDT ({:.2}%)",
            c.name,
            last,
            (last / report.initial_equity - 1.0) * 100.0
        );
    }
    if !report.notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for n in &report.notes {
            let _ = writeln!(s, "- {n}");
        }
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `table1.csv`, `table2.csv`, `curves/<name>.csv`, `backtest.svg`
/// and `summary.md` under `dir`. Output depends only on `report`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    let curves = dir.join("curves");
    std::fs::create_dir_all(&curves).map_err(|source| EvalError::Io {
        path: curves.display().to_string(),
        source,
    })?;
    write(&dir.join("table1.csv"), &table_csv(&report.table1, 4))?;
    write(&dir.join("table2.csv"), &table_csv(&report.table2, 4))?;
    for c in &report.curves {
        write(&curves.join(format!("{}.csv", c.name)), &curve_csv(c, report.initial_equity))?;
    }
    write(&dir.join("backtest.svg"), &svg(report))?;
    write(&dir.join("summary.md"), &summary(report))
}
