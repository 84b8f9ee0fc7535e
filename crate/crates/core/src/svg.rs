//! Minimal, deterministic SVG charts.
//!
//! Coordinates are printed with two decimals so the same data always yields
//! the same bytes.

use std::fmt::Write as _;

use crate::stats::CorrelationMatrix;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

pub const BLUE: &str = "#2c6fbb";
pub const RED: &str = "#c0392b";
pub const GREY: &str = "#7f8c8d";

/// Provenance written into every chart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    pub seed: u64,
    pub config_digest: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e6).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

struct Doc {
    body: String,
    width: f64,
    height: f64,
}

impl Doc {
    fn new(width: f64, height: f64, title: &str, meta: &Meta) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            body,
            "<metadata>seed={} config_digest={}</metadata>",
            meta.seed,
            escape(&meta.config_digest)
        );
        let _ = writeln!(body, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            width / 2.0,
            escape(title)
        );
        Self {
            body,
            width,
            height,
        }
    }

    fn finish(mut self) -> String {
        let _ = self.width + self.height;
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear data-to-pixel mapping for the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = padded_range(xs);
        let (y0, y1) = padded_range(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (l, r) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (t, b) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
        let _ = writeln!(
            out,
            r#"<path d="M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let (px, py) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                out,
                r#"<line x1="{px:.2}" y1="{b:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                b + 5.0,
                b + 18.0,
                fmt_tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{l:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                l - 5.0,
                l - 8.0,
                py + 4.0,
                fmt_tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            HEIGHT - 15.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(y_label)
        );
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + i as f64 * 18.0;
        let x = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 10.0,
            x + 18.0,
            y,
            escape(label)
        );
    }
}

/// Diverging colour for a coefficient: -1 blue, 0 white, +1 red.
pub fn diverging_color(r: f64) -> String {
    let r = r.clamp(-1.0, 1.0);
    let (tr, tg, tb) = if r < 0.0 { (44.0, 111.0, 187.0) } else { (192.0, 57.0, 43.0) };
    let a = r.abs();
    let mix = |t: f64| (255.0 + (t - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(tr), mix(tg), mix(tb))
}

/// Correlation heatmap; undefined entries are grey.
pub fn heatmap(m: &CorrelationMatrix, title: &str, meta: &Meta) -> String {
    let p = m.names.len().max(1);
    let cell = (560.0 / p as f64).clamp(6.0, 40.0);
    let label_space = 160.0;
    let size = label_space + cell * p as f64 + 120.0;
    let mut doc = Doc::new(size, size, title, meta);
    let out = &mut doc.body;
    for (i, row) in m.r.iter().enumerate() {
        let y = label_space + i as f64 * cell;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
            label_space - 4.0,
            y + cell / 2.0 + 3.0,
            escape(&m.names[i])
        );
        for (j, v) in row.iter().enumerate() {
            let x = label_space + j as f64 * cell;
            let fill = v.map_or_else(|| "#bdbdbd".to_string(), diverging_color);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}"><title>{} / {}: {}</title></rect>"#,
                escape(&m.names[i]),
                escape(&m.names[j]),
                v.map_or("undefined".to_string(), |r| format!("{r:.4}"))
            );
        }
    }
    for (j, name) in m.names.iter().enumerate() {
        let x = label_space + j as f64 * cell + cell / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" font-size="10" transform="rotate(-60 {x:.2} {:.2})">{}</text>"#,
            label_space - 4.0,
            label_space - 4.0,
            escape(name)
        );
    }
    // colour scale
    let sx = label_space + cell * p as f64 + 30.0;
    for k in 0..=20 {
        let r = 1.0 - k as f64 / 10.0;
        let _ = writeln!(
            out,
            r#"<rect x="{sx:.2}" y="{:.2}" width="16" height="8" fill="{}"/>"#,
            label_space + k as f64 * 8.0,
            diverging_color(r)
        );
    }
    for (k, label) in [(0, "+1"), (10, "0"), (20, "-1")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10">{label}</text>"#,
            sx + 20.0,
            label_space + k as f64 * 8.0 + 8.0
        );
    }
    doc.finish()
}

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Scatter plot with optional connected line series drawn on top.
pub fn scatter(
    points: &[(f64, f64)],
    lines: &[Series<'_>],
    title: &str,
    x_label: &str,
    y_label: &str,
    meta: &Meta,
) -> String {
    let all = points.iter().chain(lines.iter().flat_map(|s| s.points.iter()));
    let frame = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut doc = Doc::new(WIDTH, HEIGHT, title, meta);
    let out = &mut doc.body;
    frame.axes(out, x_label, y_label);
    for &(x, y) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.8" fill="{BLUE}" fill-opacity="0.45"/>"#,
            frame.px(x),
            frame.py(y)
        );
    }
    draw_lines(out, &frame, lines);
    legend(out, &lines.iter().map(|s| (s.label, s.color)).collect::<Vec<_>>());
    doc.finish()
}

fn draw_lines(out: &mut String, frame: &Frame, lines: &[Series<'_>]) {
    for s in lines {
        if s.points.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if i == 0 { "M" } else { "L" },
                frame.px(x),
                frame.py(y)
            );
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            d.trim_end(),
            s.color
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                frame.px(x),
                frame.py(y),
                s.color
            );
        }
    }
}

/// Line chart, e.g. train/test score against depth.
pub fn line_chart(lines: &[Series<'_>], title: &str, x_label: &str, y_label: &str, meta: &Meta) -> String {
    let all = lines.iter().flat_map(|s| s.points.iter());
    let frame = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut doc = Doc::new(WIDTH, HEIGHT, title, meta);
    let out = &mut doc.body;
    frame.axes(out, x_label, y_label);
    draw_lines(out, &frame, lines);
    legend(out, &lines.iter().map(|s| (s.label, s.color)).collect::<Vec<_>>());
    doc.finish()
}

/// Bin counts over `[lo, hi]`; the top edge belongs to the last bin.
pub fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins.max(1)];
    let width = (hi - lo) / counts.len() as f64;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(counts.len() - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
}

/// Overlaid histograms sharing one set of bins.
pub fn histograms(
    groups: &[(&str, &str, &[f64])],
    bins: usize,
    title: &str,
    x_label: &str,
    meta: &Meta,
) -> String {
    let (lo, hi) = groups
        .iter()
        .flat_map(|g| g.2.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() {
        if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    } else {
        (0.0, 1.0)
    };
    let counts: Vec<Vec<usize>> = groups.iter().map(|g| bin_counts(g.2, lo, hi, bins)).collect();
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let frame = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: max as f64 * 1.05,
    };
    let mut doc = Doc::new(WIDTH, HEIGHT, title, meta);
    let out = &mut doc.body;
    frame.axes(out, x_label, "count");
    let width = (hi - lo) / bins.max(1) as f64;
    for ((_, color, _), c) in groups.iter().zip(&counts) {
        for (b, &k) in c.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let x = lo + b as f64 * width;
            let (px0, px1) = (frame.px(x), frame.px(x + width));
            let (py0, py1) = (frame.py(k as f64), frame.py(0.0));
            let _ = writeln!(
                out,
                r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                px1 - px0,
                py1 - py0
            );
        }
    }
    legend(out, &groups.iter().map(|g| (g.0, g.1)).collect::<Vec<_>>());
    doc.finish()
}

/// Vertical bars with optional error whiskers.
pub fn bar_chart(bars: &[(String, f64, Option<f64>)], title: &str, y_label: &str, meta: &Meta) -> String {
    let tops = bars.iter().map(|b| b.1 + b.2.unwrap_or(0.0));
    let bottoms = bars.iter().map(|b| b.1 - b.2.unwrap_or(0.0));
    let hi = tops.fold(0.0f64, f64::max);
    let lo = bottoms.fold(0.0f64, f64::min);
    let frame = Frame {
        x0: 0.0,
        x1: bars.len().max(1) as f64,
        y0: lo,
        y1: if hi > lo { hi * 1.05 } else { lo + 1.0 },
    };
    let mut doc = Doc::new(WIDTH, HEIGHT, title, meta);
    let out = &mut doc.body;
    frame.axes(out, "", y_label);
    for (i, (label, v, err)) in bars.iter().enumerate() {
        let (px0, px1) = (frame.px(i as f64 + 0.15), frame.px(i as f64 + 0.85));
        let (a, b) = (frame.py(v.max(0.0)), frame.py(v.min(0.0)));
        let _ = writeln!(
            out,
            r#"<rect x="{px0:.2}" y="{a:.2}" width="{:.2}" height="{:.2}" fill="{BLUE}"><title>{}: {v:.4}</title></rect>"#,
            px1 - px0,
            b - a,
            escape(label)
        );
        if let Some(e) = err {
            let cx = (px0 + px1) / 2.0;
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                frame.py(v + e),
                frame.py(v - e)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            (px0 + px1) / 2.0,
            HEIGHT - MARGIN_BOTTOM + 32.0,
            escape(label)
        );
    }
    doc.finish()
}
