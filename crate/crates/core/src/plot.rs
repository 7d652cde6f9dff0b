//! SVG colour barcodes of segmentations.

use std::fmt::Write as _;

use crate::segmentation::Segmentation;

const WIDTH: f64 = 800.0;
const ROW_HEIGHT: f64 = 24.0;
const LABEL_WIDTH: f64 = 80.0;
const GAP: f64 = 6.0;

/// Colour for an action id. Distinct hues for the first dozen or so ids.
pub fn action_color(action: usize) -> String {
    // Golden-angle hue steps keep neighbouring ids far apart.
    let hue = (action as f64 * 137.507_764) % 360.0;
    let light = if action.is_multiple_of(2) { 50 } else { 38 };
    format!("hsl({hue:.1},65%,{light}%)")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one barcode row per `(name, segmentation)`, all scaled to the
/// longest sequence.
pub fn barcode_svg(rows: &[(&str, &Segmentation)]) -> String {
    let longest = rows.iter().map(|(_, s)| s.len()).max().unwrap_or(0).max(1) as f64;
    let height = rows.len() as f64 * (ROW_HEIGHT + GAP) + GAP;
    let total_width = LABEL_WIDTH + WIDTH + GAP;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_width}" height="{height}" viewBox="0 0 {total_width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (r, (name, seg)) in rows.iter().enumerate() {
        let y = GAP + r as f64 * (ROW_HEIGHT + GAP);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - GAP,
            y + ROW_HEIGHT * 0.7,
            escape(name)
        );
        for s in seg.segments() {
            let x = LABEL_WIDTH + WIDTH * s.start as f64 / longest;
            let w = WIDTH * s.len as f64 / longest;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.3}" y="{y:.1}" width="{w:.3}" height="{ROW_HEIGHT}" fill="{}"><title>action {} [{}, {})</title></rect>"#,
                action_color(s.action),
                s.action,
                s.start,
                s.end()
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
