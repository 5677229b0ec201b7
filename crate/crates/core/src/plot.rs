//! Minimal SVG rendering of ROC curves and bands.

use std::fmt::Write;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn sx(v: f64) -> f64 {
    MARGIN + v.clamp(0.0, 1.0) * (SIZE - 2.0 * MARGIN)
}

fn sy(v: f64) -> f64 {
    SIZE - MARGIN - v.clamp(0.0, 1.0) * (SIZE - 2.0 * MARGIN)
}

fn polyline(points: impl Iterator<Item = (f64, f64)>) -> String {
    points
        .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Band rows are `(z, lower, estimate, upper)`.
#[derive(Debug, Clone, Default)]
pub struct Plot<'a> {
    pub title: &'a str,
    pub curve: Option<&'a [(f64, f64)]>,
    pub band: Option<&'a [[f64; 4]]>,
}

impl Plot<'_> {
    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        // Axes and ticks.
        let _ = writeln!(
            s,
            r#"<rect x="{m}" y="{m}" width="{w}" height="{w}" fill="none" stroke="black"/>"#,
            m = MARGIN,
            w = SIZE - 2.0 * MARGIN
        );
        for k in 0..=5 {
            let t = k as f64 / 5.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text>"#,
                sx(t),
                SIZE - MARGIN + 16.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.1}</text>"#,
                MARGIN - 6.0,
                sy(t) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">false positive fraction</text>"#,
            SIZE / 2.0,
            SIZE - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">true positive fraction</text>"#,
            SIZE / 2.0,
            SIZE / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle">{}</text>"#,
            SIZE / 2.0,
            escape(self.title)
        );
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#999" stroke-dasharray="4 4"/>"##,
            polyline([(0.0, 0.0), (1.0, 1.0)].into_iter())
        );

        if let Some(band) = self.band {
            let upper = band.iter().map(|r| (r[0], r[3]));
            let lower = band.iter().rev().map(|r| (r[0], r[1]));
            let _ = writeln!(
                s,
                r##"<polygon points="{}" fill="#4a7bd0" fill-opacity="0.25" stroke="none"/>"##,
                polyline(upper.chain(lower))
            );
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#1f4f9e" stroke-width="2"/>"##,
                polyline(band.iter().map(|r| (r[0], r[2])))
            );
        }
        if let Some(curve) = self.curve {
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
                polyline(curve.iter().copied())
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
