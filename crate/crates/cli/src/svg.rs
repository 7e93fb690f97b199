use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

enum Mark {
    Points { pts: Vec<(f64, f64)>, color: String, radius: f64 },
    Line { pts: Vec<(f64, f64)>, color: String, dashed: bool },
}

/// Static scatter/line chart with linear axes.
pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    marks: Vec<Mark>,
    legend: Vec<(String, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), marks: Vec::new(), legend: Vec::new() }
    }

    pub fn points(&mut self, pts: Vec<(f64, f64)>, color: &str, label: Option<&str>) {
        if let Some(l) = label {
            self.legend.push((l.into(), color.into()));
        }
        self.marks.push(Mark::Points { pts, color: color.into(), radius: 1.8 });
    }

    pub fn line(&mut self, pts: Vec<(f64, f64)>, color: &str, dashed: bool, label: Option<&str>) {
        if let Some(l) = label {
            self.legend.push((l.into(), color.into()));
        }
        self.marks.push(Mark::Line { pts, color: color.into(), dashed });
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for m in &self.marks {
            let pts = match m {
                Mark::Points { pts, .. } | Mark::Line { pts, .. } => pts,
            };
            for &(x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        }
        if !b.0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let (x0, x1) = pad(b.0, b.1);
        let (y0, y1) = pad(b.2, b.3);
        (x0, x1, y0, y1)
    }

    /// Renders the chart; `timestamp` adds a generation comment.
    pub fn render(&self, timestamp: Option<u64>) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        if let Some(t) = timestamp {
            let _ = writeln!(s, "<!-- generated-unix-time: {t} -->");
        }
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
                sx(xv),
                b + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
                l - 4.0,
                sy(yv) + 3.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 18.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for m in &self.marks {
            match m {
                Mark::Points { pts, color, radius } => {
                    let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.5">"#);
                    for &(x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}"/>"#, sx(x), sy(y));
                    }
                    let _ = writeln!(s, "</g>");
                }
                Mark::Line { pts, color, dashed } => {
                    let path: Vec<String> = pts
                        .iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x.clamp(x0, x1)), sy(y.clamp(y0, y1))))
                        .collect();
                    let dash = if *dashed { r#" stroke-dasharray="5,4""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
                        path.join(" ")
                    );
                }
            }
        }
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = t + 14.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, l + 8.0, y - 9.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
                l + 22.0,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_is_the_only_difference() {
        let mut p = Plot::new("t <1>", "x", "y");
        p.points(vec![(0.0, 1.0), (1.0, f64::NAN)], PALETTE[0], Some("a"));
        p.line(vec![(0.0, 0.0), (1.0, 1.0)], PALETTE[1], true, None);
        let a = p.render(None);
        let b = p.render(Some(12));
        assert!(a.contains("t &lt;1&gt;"));
        assert_eq!(b.lines().filter(|l| !l.starts_with("<!--")).collect::<Vec<_>>(), a.lines().collect::<Vec<_>>());
        assert_eq!(a.matches("<circle").count(), 1);
    }
}
