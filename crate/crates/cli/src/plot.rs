//! Minimal hand-written SVG charts for `eval --plots`.

use std::fmt::Write;

use lanetopo::eval::gaps::GAP_BIN_EDGES;
use lanetopo::eval::{pr_curve, MetricReport, Ranked, SceneEval, DET_THRESHOLDS};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>
<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{x_label}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>
"#,
        W / 2.0,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0,
    );
    s
}

fn px(x: f64) -> f64 {
    MARGIN + x * (W - 2.0 * MARGIN)
}

fn py(y: f64) -> f64 {
    H - MARGIN - y * (H - 2.0 * MARGIN)
}

/// Precision-recall curves, one polyline per labelled series, on the unit square.
pub fn pr_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = frame(title, "recall", "precision");
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, px(t), H - MARGIN + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, MARGIN - 4.0, py(t) + 4.0);
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = pts.iter().map(|&(r, p)| format!("{:.1},{:.1}", px(r), py(p))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{colour}" text-anchor="end">{label}</text>"#, W - MARGIN);
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bar chart with one labelled bar per count.
pub fn bar_chart(title: &str, x_label: &str, labels: &[String], counts: &[usize]) -> String {
    let mut s = frame(title, x_label, "count");
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let slot = 1.0 / counts.len().max(1) as f64;
    for (i, (&c, label)) in counts.iter().zip(labels).enumerate() {
        let x0 = px(i as f64 * slot + 0.1 * slot);
        let w = px(slot * 0.8) - MARGIN;
        let y = py(c as f64 / top);
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.1}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="#1f77b4"/>"##,
            H - MARGIN - y
        );
        let cx = x0 + w / 2.0;
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{c}</text>"#, y - 4.0);
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{}" text-anchor="middle" font-size="10">{label}</text>"#, H - MARGIN + 14.0);
    }
    s.push_str("</svg>\n");
    s
}

fn pooled(evals: &[SceneEval], pick: impl Fn(&SceneEval) -> (&[Ranked], usize)) -> Vec<(f64, f64)> {
    let mut ranked = Vec::new();
    let mut n_gt = 0;
    for e in evals {
        let (r, n) = pick(e);
        ranked.extend_from_slice(r);
        n_gt += n;
    }
    pr_curve(&ranked, n_gt)
}

fn gap_labels() -> Vec<String> {
    let mut lo = 0.0;
    let mut labels: Vec<String> = GAP_BIN_EDGES
        .iter()
        .map(|&hi| {
            let l = format!("{lo}-{hi}");
            lo = hi;
            l
        })
        .collect();
    labels.push(format!(">{lo}"));
    labels
}

/// Every chart `eval --plots` writes, as `(file name, svg)`.
pub fn all(evals: &[SceneEval], report: &MetricReport) -> Vec<(String, String)> {
    let series = |pick: &dyn Fn(&SceneEval, usize) -> (&[Ranked], usize)| -> Vec<(String, Vec<(f64, f64)>)> {
        DET_THRESHOLDS
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("{t} m"), pooled(evals, |e| pick(e, i))))
            .collect()
    };
    let points = series(&|e, i| (&e.points[i], e.num_points));
    let lanes = series(&|e, i| (&e.lanes[i], e.num_lanes));
    let topo = vec![
        ("lane-lane".to_string(), pooled(evals, |e| (&e.top_ll.0, e.top_ll.1))),
        ("lane-traffic".to_string(), pooled(evals, |e| (&e.top_lt.0, e.top_lt.1))),
    ];
    vec![
        ("pr_points.svg".into(), pr_chart("Point detection PR", &points)),
        ("pr_lanes.svg".into(), pr_chart("Lane detection PR", &lanes)),
        ("pr_topology.svg".into(), pr_chart("Topology PR", &topo)),
        (
            "endpoint_gaps.svg".into(),
            bar_chart("Endpoint gaps", "gap (m)", &gap_labels(), &report.gap_histogram),
        ),
    ]
}
