//! Minimal SVG line charts for sweep reports.

use std::fmt::Write;

use crate::experiment::{ExperimentReport, SummaryRow};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A line chart with y fixed to [0, 1].
pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut lo, mut hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let sx = |x: f64| PAD + (x - lo) / (hi - lo) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(out, r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - PAD, W - PAD, H - PAD).unwrap();
    writeln!(out, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD).unwrap();
    for i in 0..=4 {
        let y = i as f64 / 4.0;
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y:.2}</text>"#, PAD - 6.0, sy(y) + 4.0).unwrap();
    }
    let mut ticks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#, sx(x), H - PAD + 16.0).unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label)).unwrap();
    writeln!(out, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">median F1</text>"#, H / 2.0, H / 2.0).unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
        for &(x, y) in &s.points {
            writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(x), sy(y)).unwrap();
        }
        let ly = PAD + 16.0 * i as f64;
        writeln!(out, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, W - PAD + 4.0, escape(&s.label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn series_by_target(report: &ExperimentReport, x: impl Fn(&SummaryRow) -> f64, keep: impl Fn(&SummaryRow) -> bool) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for row in report.summary.iter().filter(|r| keep(r)) {
        let label = format!("{} ({:?})", row.target, row.selection).to_lowercase();
        let point = (x(row), row.median_f1);
        match out.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push(point),
            None => out.push(Series { label, points: vec![point] }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

pub fn f1_vs_budget(report: &ExperimentReport) -> String {
    let base = report.spec.fn_rates[0];
    let series = series_by_target(report, |r| r.budget as f64, |r| r.fn_rate == base);
    line_chart(&format!("{}: F1 vs. labeling budget", report.spec.name), "budget", &series)
}

pub fn f1_vs_noise(report: &ExperimentReport) -> String {
    let base = report.spec.budgets[0];
    let series = series_by_target(report, |r| r.fn_rate, |r| r.budget == base);
    line_chart(&format!("{}: F1 vs. false-negative rate", report.spec.name), "false-negative rate", &series)
}
