//! Reliability diagram as a standalone SVG.

use std::fmt::Write;

use htp_core::metrics::CalibrationCurve;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn px(v: f64) -> f64 {
    MARGIN + v * (SIZE - 2.0 * MARGIN)
}

fn py(v: f64) -> f64 {
    SIZE - MARGIN - v * (SIZE - 2.0 * MARGIN)
}

/// Observed against expected confidence level for the given horizon indices,
/// with the diagonal as reference.
pub fn reliability_diagram(curve: &CalibrationCurve, horizons: &[usize]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let (lo, hi) = (px(0.0), px(1.0));
    let _ = writeln!(
        s,
        r#"<path d="M{lo} {} H{hi} M{lo} {} V{}" stroke="black" fill="none"/>"#,
        py(0.0),
        py(0.0),
        py(1.0)
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="black"/><text x="{x}" y="{ty}" text-anchor="middle">{v:.1}</text>"#,
            x = px(v),
            y0 = py(0.0),
            y1 = py(0.0) + 5.0,
            ty = py(0.0) + 20.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="black"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.1}</text>"#,
            x0 = px(0.0) - 5.0,
            x1 = px(0.0),
            y = py(v),
            tx = px(0.0) - 8.0,
            ty = py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">expected confidence level 1-alpha</text>"#,
        SIZE / 2.0,
        SIZE - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">observed frequency</text>"#,
        y = SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{lo}" y1="{}" x2="{hi}" y2="{}" stroke="#888" stroke-dasharray="6 4"/>"##,
        py(0.0),
        py(1.0)
    );
    for (i, &h) in horizons
        .iter()
        .filter(|&&h| h < curve.num_horizons())
        .enumerate()
    {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = curve
            .levels
            .iter()
            .zip(&curve.f_o[h])
            .map(|(l, f)| format!("{:.2},{:.2}", px(*l), py(*f)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">t+{:.1} s</text>"#,
            MARGIN + 10.0,
            MARGIN + 35.0,
            MARGIN + 40.0,
            ly + 4.0,
            curve.horizon_s(h)
        );
    }
    s.push_str("</svg>\n");
    s
}
