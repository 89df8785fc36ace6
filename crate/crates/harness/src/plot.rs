//! SVG scatter of rotation error against overlap ratio.

use std::fmt::Write;

use crate::overlap::{OverlapRow, OVERLAP_FLAG};

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// Scatter with overlap on x and rotation error on y. Flagged rows are drawn
/// in grey, at zero error when `zero_flagged` is set.
pub fn overlap_scatter(rows: &[OverlapRow], zero_flagged: bool) -> String {
    let err = |r: &OverlapRow| if zero_flagged && r.flagged { 0.0 } else { r.rot_err_deg };
    let y_max = rows.iter().map(err).fold(1.0, f64::max);
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + x.clamp(0.0, 1.0) * pw;
    let py = |y: f64| H - MARGIN - (y / y_max) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y0}H{x1}M{x0} {y0}V{y1}" stroke="black" fill="none"/>"#,
        x0 = MARGIN,
        y0 = H - MARGIN,
        x1 = W - MARGIN,
        y1 = MARGIN
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.1}</text>"#, px(v), H - MARGIN + 16.0);
        let e = v * y_max;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{e:.1}</text>"#, MARGIN - 6.0, py(e) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{y1}" stroke="grey" stroke-dasharray="4 3"/>"#,
        x = px(OVERLAP_FLAG),
        y0 = H - MARGIN,
        y1 = MARGIN
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">overlap ratio</text>"#, W / 2.0, H - 14.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">rotation error (deg)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for r in rows {
        let color = if r.flagged { "#999999" } else { "#1f5fa8" };
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(r.overlap), py(err(r)));
    }
    s.push_str("</svg>\n");
    s
}
