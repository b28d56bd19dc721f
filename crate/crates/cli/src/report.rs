//! Markdown tables and SVG line charts. Output is a pure function of the
//! inputs so regenerated reports are byte-identical.

use std::fmt::Write;

use cdee::evaluator::CurvePoint;
use cdee::metrics::MetricReport;

/// Column order of the metric table.
pub const METRIC_COLUMNS: [&str; 5] = ["COEFF", "CORR", "NRMSE", "NMAE", "AUC"];

fn metric_values(m: &MetricReport) -> [f64; 5] {
    [m.coeff, m.corr, m.nrmse, m.nmae, m.auc]
}

/// Error metrics are better when lower.
fn lower_is_better(column: usize) -> bool {
    matches!(column, 2 | 3)
}

/// One row per variant; the best value in each column is bolded (all ties).
/// Missing metrics print as `n/a`.
pub fn metric_table(rows: &[(String, Option<MetricReport>)]) -> String {
    let mut best = [None::<f64>; 5];
    for (_, m) in rows {
        if let Some(m) = m {
            for (c, v) in metric_values(m).into_iter().enumerate() {
                let better = match best[c] {
                    None => true,
                    Some(b) if lower_is_better(c) => v < b,
                    Some(b) => v > b,
                };
                if better {
                    best[c] = Some(v);
                }
            }
        }
    }
    let mut out = String::new();
    out.push_str("| variant |");
    for c in METRIC_COLUMNS {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(METRIC_COLUMNS.len()));
    out.push('\n');
    for (name, m) in rows {
        let _ = write!(out, "| {name} |");
        match m {
            Some(m) => {
                for (c, v) in metric_values(m).into_iter().enumerate() {
                    let cell = format!("{v:.4}");
                    if best[c].is_some_and(|b| format!("{b:.4}") == cell) {
                        let _ = write!(out, " **{cell}** |");
                    } else {
                        let _ = write!(out, " {cell} |");
                    }
                }
            }
            None => out.push_str(&" n/a |".repeat(METRIC_COLUMNS.len())),
        }
        out.push('\n');
    }
    out
}

/// Lift table at one budget: estimated LPA, estimated realized cost and
/// (when known) the generator's exact LPA.
pub fn lift_table(budget: f64, rows: &[(String, CurvePoint)]) -> String {
    let mut out = format!("Budget {budget:.2}\n\n| policy | LPA | cost | planned cost | true LPA |\n|---|---:|---:|---:|---:|\n");
    for (name, p) in rows {
        let truth = p.true_lpa.map_or("n/a".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(out, "| {name} | {:.2} | {:.2} | {:.2} | {truth} |", p.lpa, p.cost, p.planned_cost);
    }
    out
}

pub struct Series<'a> {
    pub name: &'a str,
    /// `(x, y)` in drawing order.
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#7f7f7f", "#17becf"];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with one polyline per series and a marker at every point; a
/// single-point series gets only its marker.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (x0, x1) = nice_range(
        all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = nice_range(
        all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let (x0, x1, y0, y1) = if all.is_empty() { (0.0, 1.0, 0.0, 1.0) } else { (x0, x1, y0, y1) };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.0}</text>"#,
            sx(fx),
            TOP + plot_h + 18.0
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.0}</text>"#, LEFT - 6.0, sy(fy) + 4.0);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#e0e0e0"/>"##,
            sy(fy),
            LEFT + plot_w
        );
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#808080" stroke-dasharray="4 3"/>"##,
            sy(0.0),
            LEFT + plot_w
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        }
        for &(x, y) in &pts {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(out, r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly:.1}">{}</text>"#, lx + 18.0, escape(s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// LPA against estimated realized cost, one series per curve.
pub fn lpa_chart(curves: &[(String, Vec<CurvePoint>)]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, pts)| Series {
            name,
            points: pts.iter().map(|p| (p.cost, p.lpa)).collect(),
        })
        .collect();
    line_chart("Lift purchase amount vs incentive cost", "estimated incentive cost", "LPA", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(v: f64) -> MetricReport {
        MetricReport {
            auc: 0.7 + v,
            corr: 0.3 + v,
            coeff: 0.5 + v,
            nrmse: 1.0 - v,
            nmae: 0.8 - v,
        }
    }

    #[test]
    fn best_values_are_bolded() {
        let t = metric_table(&[("a".into(), Some(metrics(0.0))), ("b".into(), Some(metrics(0.01)))]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "| variant | COEFF | CORR | NRMSE | NMAE | AUC |");
        assert!(!lines[2].contains("**"));
        assert_eq!(lines[3], "| b | **0.5100** | **0.3100** | **0.9900** | **0.7900** | **0.7100** |");
    }

    #[test]
    fn missing_metrics_print_na() {
        let t = metric_table(&[("a".into(), None), ("b".into(), Some(metrics(0.0)))]);
        assert!(t.contains("| a | n/a | n/a | n/a | n/a | n/a |"));
        assert!(t.contains("**0.7000**"));
    }

    #[test]
    fn single_point_chart_has_marker_only() {
        let svg = line_chart("t", "x", "y", &[Series { name: "one", points: vec![(1.0, 2.0)] }]);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn chart_is_deterministic() {
        let s = || vec![Series { name: "a<b", points: vec![(0.0, -1.0), (2.0, 3.0), (4.0, 5.0)] }];
        let a = line_chart("t", "x", "y", &s());
        assert_eq!(a, line_chart("t", "x", "y", &s()));
        assert_eq!(a.matches("<polyline").count(), 1);
        assert!(a.contains("a&lt;b"));
    }
}
