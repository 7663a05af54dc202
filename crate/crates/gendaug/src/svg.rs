//! Self-contained SVG line and scatter plots. Every plot embeds the data
//! it draws as CSV inside an XML comment.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Points,
    Line,
    LinePoints,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric vertical error bars, one per point.
    pub errors: Option<Vec<f64>>,
    pub mark: Mark,
    /// CSS class on every marker, for styling and inspection.
    pub class: String,
    pub color: Option<String>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>, mark: Mark) -> Self {
        let name = name.into();
        Self { class: String::from("series"), name, points, errors: None, mark, color: None }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines `(y, label)`.
    pub hlines: Vec<(f64, String)>,
    /// Diagonal `y = x` guide.
    pub diagonal: bool,
    pub data: String,
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// `t` printed with as many decimals as the tick spacing needs.
fn tick_label(t: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let label = format!("{:.*}", decimals, (t / step).round() * step);
    if label.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        label.trim_start_matches('-').to_string()
    } else {
        label
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.08;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Plot {
    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let (x0, x1) = bounds(xs);
        let ys = self.series.iter().flat_map(|s| {
            s.points.iter().enumerate().flat_map(move |(i, p)| {
                let e = s.errors.as_ref().map_or(0.0, |e| e[i]);
                [p.1 - e, p.1 + e]
            })
        });
        let mut ys: Vec<f64> = ys.collect();
        ys.extend(self.hlines.iter().map(|h| h.0));
        if self.diagonal {
            ys.extend([x0, x1]);
        }
        let (y0, y1) = bounds(ys.into_iter());
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, "<!-- data\n{}-->", self.data.replace("--", "- -"));
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
        for (lo, hi, vertical) in [(x0, x1, true), (y0, y1, false)] {
            let step = nice_step(hi - lo);
            let mut t = (lo / step).ceil() * step;
            while t <= hi + 1e-9 * step {
                let label = tick_label(t, step);
                if vertical {
                    let x = sx(t);
                    let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP, TOP + ph);
                    let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, TOP + ph + 16.0);
                } else {
                    let y = sy(t);
                    let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
                    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0, y + 4.0);
                }
                t += step;
            }
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 14.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        if self.diagonal {
            let (a, b) = (x0.max(y0), x1.min(y1));
            if a < b {
                let _ = writeln!(
                    s,
                    r##"<line class="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                    sx(a),
                    sy(a),
                    sx(b),
                    sy(b)
                );
            }
        }
        for (y, label) in &self.hlines {
            let _ = writeln!(
                s,
                r##"<line class="baseline" x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
                sy(*y),
                LEFT + pw,
                sy(*y)
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT + pw - 4.0, sy(*y) - 4.0, escape(label));
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = series.color.clone().unwrap_or_else(|| PALETTE[k % PALETTE.len()].to_string());
            if matches!(series.mark, Mark::Line | Mark::LinePoints) && series.points.len() > 1 {
                let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
            }
            if let Some(errs) = &series.errors {
                for (&(x, y), &e) in series.points.iter().zip(errs) {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                        sx(x),
                        sy(y - e),
                        sx(x),
                        sy(y + e)
                    );
                }
            }
            if matches!(series.mark, Mark::Points | Mark::LinePoints) {
                for &(x, y) in &series.points {
                    let _ = writeln!(
                        s,
                        r#"<circle class="{}" cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                        series.class,
                        sx(x),
                        sy(y)
                    );
                }
            }
            let ly = TOP + 14.0 + 16.0 * k as f64;
            let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, LEFT + 10.0, ly - 9.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, LEFT + 25.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }
}
