//! Training-curve and endpoint-error summaries as CSV and SVG.

use std::fmt::Write;

use super::train::TrainingReport;

/// `step,lr,loss` rows.
pub fn curve_csv(report: &TrainingReport) -> String {
    let mut s = String::from("step,lr,loss\n");
    for (i, (lr, loss)) in report.learning_rates.iter().zip(&report.losses).enumerate() {
        writeln!(s, "{i},{lr:e},{loss:e}").unwrap();
    }
    s
}

/// One row per evaluation point: before and after training.
pub fn summary_csv(report: &TrainingReport) -> String {
    let mut s = String::from("stage,epe,aligned_mse,unaligned_mse\n");
    for (stage, e) in [("initial", &report.initial), ("final", &report.last)] {
        writeln!(s, "{stage},{:e},{:e},{:e}", e.epe, e.aligned_mse, e.unaligned_mse).unwrap();
    }
    s
}

/// Loss against step on a log axis, with the EPE summary as a caption.
pub fn curve_svg(report: &TrainingReport) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let logs: Vec<f64> = report.losses.iter().map(|l| l.max(1e-12).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = logs.len().max(2) - 1;
    let mut points = String::new();
    for (i, l) in logs.iter().enumerate() {
        let x = m + (w - 2.0 * m) * i as f64 / n as f64;
        let y = h - m - (h - 2.0 * m) * (l - lo) / span;
        write!(points, "{x:.2},{y:.2} ").unwrap();
    }
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    )
    .unwrap();
    writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#, points.trim_end()).unwrap();
    if logs.is_empty() {
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">no training steps</text>"#, w / 2.0, h / 2.0).unwrap();
    } else {
        writeln!(s, r#"<text x="8" y="{}" font-size="11">1e{hi:.1}</text>"#, m + 4.0).unwrap();
        writeln!(s, r#"<text x="8" y="{}" font-size="11">1e{lo:.1}</text>"#, h - m).unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">step {}</text>"#,
        w - m,
        h - m + 16.0,
        report.losses.len()
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{m}" y="24" font-size="13">TRL loss   EPE {:.4} -> {:.4}</text>"#,
        report.initial.epe, report.last.epe
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}
