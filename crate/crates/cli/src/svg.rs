//! Static SVG charts, written by hand so reports carry no graphics
//! dependency: grouped bars with whiskers and categorical line series.
//! Both draw on a fixed [0,1] y-axis; every charted metric is a success
//! or retrieval rate. Output text is deterministic for fixed input.

use std::fmt::Write as _;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 430.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 18.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 64.0;

const PALETTE: [&str; 6] = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#82c6e2"];

pub struct Bar {
    pub label: String,
    pub value: f64,
    /// Half-width of the error whisker (sample std); 0 draws none.
    pub whisker: f64,
}

pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

pub struct Series {
    pub label: String,
    /// One entry per x position; `None` leaves a gap.
    pub values: Vec<Option<f64>>,
}

fn x_span() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn y_px(v: f64) -> f64 {
    TOP + (1.0 - v.clamp(0.0, 1.0)) * (HEIGHT - TOP - BOTTOM)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn open_chart(title: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        esc(y_label)
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_px(v);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            WIDTH - RIGHT
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{v:.1}</text>",
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM
    );
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
    s
}

fn legend(s: &mut String, labels: &[String]) {
    let x = WIDTH - RIGHT - 170.0;
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"11\" height=\"11\" fill=\"{}\"/>",
            color(i)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>",
            x + 16.0,
            y + 10.0,
            esc(label)
        );
    }
}

/// Grouped bar chart; bars sharing a label share a color, and the distinct
/// bar labels (in first-seen order) form the legend.
pub fn bar_chart(title: &str, y_label: &str, groups: &[BarGroup]) -> String {
    let mut s = open_chart(title, y_label);
    let mut labels: Vec<String> = Vec::new();
    for g in groups {
        for b in &g.bars {
            if !labels.contains(&b.label) {
                labels.push(b.label.clone());
            }
        }
    }
    let gw = x_span() / groups.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let x0 = LEFT + gi as f64 * gw;
        let nb = g.bars.len().max(1) as f64;
        let bw = gw * 0.72 / nb;
        for (bi, b) in g.bars.iter().enumerate() {
            let x = x0 + gw * 0.14 + bi as f64 * bw;
            let ci = labels.iter().position(|l| l == &b.label).unwrap_or(0);
            let y = y_px(b.value);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                bw * 0.9,
                HEIGHT - BOTTOM - y,
                color(ci)
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{:.2}</text>",
                x + bw * 0.45,
                y - 4.0,
                b.value
            );
            if b.whisker > 0.0 {
                let cx = x + bw * 0.45;
                let (lo, hi) = (y_px(b.value - b.whisker), y_px(b.value + b.whisker));
                let cap = bw * 0.18;
                for (y1, y2, x1, x2) in [
                    (hi, lo, cx, cx),
                    (hi, hi, cx - cap, cx + cap),
                    (lo, lo, cx - cap, cx + cap),
                ] {
                    let _ = writeln!(
                        s,
                        "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" \
                         stroke=\"#333333\" stroke-width=\"1.5\"/>"
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            x0 + gw / 2.0,
            HEIGHT - BOTTOM + 18.0,
            esc(&g.label)
        );
    }
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

/// Line chart over categorical x positions (evenly spaced, labeled ticks).
pub fn line_chart(
    title: &str,
    x_title: &str,
    y_label: &str,
    x_labels: &[String],
    series: &[Series],
) -> String {
    let mut s = open_chart(title, y_label);
    let n = x_labels.len().max(1) as f64;
    let x_at = |i: usize| LEFT + x_span() * (i as f64 + 0.5) / n;
    for (i, label) in x_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x_at(i),
            HEIGHT - BOTTOM + 16.0,
            esc(label)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        LEFT + x_span() / 2.0,
        HEIGHT - BOTTOM + 36.0,
        esc(x_title)
    );
    for (si, sr) in series.iter().enumerate() {
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, s: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(
                    s,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
                    seg.join(" "),
                    color(si)
                );
            }
            seg.clear();
        };
        for (i, v) in sr.values.iter().enumerate() {
            match v {
                Some(v) => {
                    let (x, y) = (x_at(i), y_px(*v));
                    segment.push(format!("{x:.1},{y:.1}"));
                    let _ = writeln!(
                        s,
                        "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{}\"/>",
                        color(si)
                    );
                }
                None => flush(&mut segment, &mut s),
            }
        }
        flush(&mut segment, &mut s);
    }
    let labels: Vec<String> = series.iter().map(|sr| sr.label.clone()).collect();
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}
