//! Static SVG rendering of alignment curves.

use std::fmt::Write;

use crate::metrics::AlignmentCurve;
use crate::sim::OracleBundle;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.lo) / (self.hi - self.lo) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - 2.0 * MARGIN)
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        let mut s = String::new();
        for (a, b) in pts {
            let _ = write!(s, "{:.2},{:.2} ", self.x(a), self.y(b));
        }
        s.trim_end().to_string()
    }
}

/// Intermediate score on x, aligned score on y, one polyline per dataset,
/// the identity as a grey guide and, when given, the generating distortions
/// dashed over the same ranges.
pub fn render_alignment_svg(curves: &[AlignmentCurve], oracle: Option<&OracleBundle>) -> String {
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 5.0;
    for c in curves {
        for &(s, y) in &c.points {
            lo = lo.min(s).min(y);
            hi = hi.max(s).max(y);
        }
    }
    let lo = (lo * 2.0).floor() / 2.0;
    let hi = (hi * 2.0).ceil() / 2.0;
    let f = Frame { lo, hi };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let mut t = lo.ceil();
    while t <= hi {
        let (x, y) = (f.x(t), f.y(t));
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 5.0,
            HEIGHT - MARGIN + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#,
            MARGIN - 5.0,
            MARGIN - 8.0,
            y + 4.0
        );
        t += 1.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">intermediate score</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">aligned score</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#aaaaaa" stroke-dasharray="2 3"/>"##,
        f.polyline([(lo, lo), (hi, hi)].into_iter())
    );

    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let (Some(o), Some((a, b))) = (oracle.and_then(|o| o.experiment(&c.dataset)), c.range()) {
            let pts = (0..=100).map(|i| {
                let s = a + (b - a) * i as f64 / 100.0;
                (s, o.distortion.eval(s).clamp(1.0, 5.0))
            });
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-dasharray="6 4"/>"#,
                f.polyline(pts)
            );
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            f.polyline(c.points.iter().copied())
        );
        let ly = MARGIN + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            MARGIN + 12.0,
            MARGIN + 32.0,
            MARGIN + 38.0,
            ly + 4.0,
            escape(&c.dataset)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_curve_plus_guide() {
        let curves = vec![
            AlignmentCurve {
                dataset: "a".into(),
                points: vec![(1.0, 1.0), (5.0, 5.0)],
                fitted: None,
            },
            AlignmentCurve {
                dataset: "b<c".into(),
                points: vec![(1.0, 2.0), (5.0, 4.5)],
                fitted: None,
            },
        ];
        let svg = render_alignment_svg(&curves, None);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("b&lt;c"));
    }
}
