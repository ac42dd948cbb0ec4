//! Minimal SVG line chart of the evolution curve.

use std::fmt::Write;

use agra::metrics::CurvePoint;

const W: f64 = 640.0;
const H: f64 = 260.0;
const PAD: f64 = 48.0;

fn panel(out: &mut String, x0: f64, title: &str, xs: &[f64], ys: &[f64]) {
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let xmax = xs.iter().copied().fold(1.0, f64::max);
    let pw = W / 2.0 - 1.5 * PAD;
    let ph = H - 2.0 * PAD;
    let px = |x: f64| x0 + PAD + if xmax > 1.0 { (x - 1.0) / (xmax - 1.0) * pw } else { pw / 2.0 };
    let py = |y: f64| PAD + ph - (y - lo) / span * ph;
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#, x0 + PAD + pw / 2.0, PAD / 2.0);
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{PAD}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#,
        x0 + PAD
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{hi:.4}</text>"#, x0 + PAD - 4.0, PAD + 4.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{lo:.4}</text>"#, x0 + PAD - 4.0, PAD + ph);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, x0 + PAD + pw / 2.0, H - PAD / 3.0);
    let points: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
}

/// Reconstruction MSE and norm Pearson against the number of models.
pub fn evolution_svg(points: &[CurvePoint]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let series = |f: fn(&CurvePoint) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
        points.iter().filter_map(|p| f(p).map(|v| (p.n as f64, v))).unzip()
    };
    let (xm, ym) = series(|p| p.mse);
    let (xp, yp) = series(|p| p.norm_pearson);
    panel(&mut out, 0.0, "reconstruction MSE", &xm, &ym);
    panel(&mut out, W / 2.0, "norm Pearson", &xp, &yp);
    out.push_str("</svg>\n");
    out
}
