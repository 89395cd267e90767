//! Standalone SVG line charts of steps per try.

use std::fmt::Write;

use crate::emit::sig6;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Smallest 1/2/5 × 10^k that is at least `v`.
fn nice_ceiling(v: f64) -> f64 {
    if v <= 1.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * mag)
}

/// Renders `steps[i]` against try `i + 1`. The series is drawn as a single
/// `polyline` with one point per try.
pub fn line_chart_svg(title: &str, steps: &[f64]) -> String {
    let n = steps.len();
    let ymax = nice_ceiling(steps.iter().copied().fold(0.0, f64::max));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let xpos = |i: usize| {
        if n <= 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let ypos = |v: f64| TOP + plot_h * (1.0 - v / ymax);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let _ = writeln!(svg, r##"<g class="axes" stroke="#333" stroke-width="1">"##);
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g class="ticks">"#);
    for k in 0..=TICKS {
        let v = ymax * k as f64 / TICKS as f64;
        let y = ypos(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            sig6(v)
        );
    }
    if n > 0 {
        let mut last = usize::MAX;
        for k in 0..=TICKS {
            let i = (n - 1) * k / TICKS;
            if i == last {
                continue;
            }
            last = i;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                xpos(i),
                TOP + plot_h + 18.0,
                i + 1
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">try</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">steps</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    let mut points = String::with_capacity(n * 16);
    for (i, &v) in steps.iter().enumerate() {
        if i > 0 {
            points.push(' ');
        }
        let _ = write!(points, "{:.2},{:.2}", xpos(i), ypos(v));
    }
    let _ = writeln!(
        svg,
        r##"<polyline class="series" fill="none" stroke="#1f5fa8" stroke-width="1" points="{points}"/>"##
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nice_ceilings() {
        assert_eq!(nice_ceiling(0.0), 1.0);
        assert_eq!(nice_ceiling(37.0), 50.0);
        assert_eq!(nice_ceiling(100.0), 100.0);
        assert_eq!(nice_ceiling(10001.0), 20000.0);
    }

    #[test]
    fn title_is_escaped() {
        let svg = line_chart_svg("a<b & c", &[1.0, 2.0]);
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
