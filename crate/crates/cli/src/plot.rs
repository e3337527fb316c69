//! Minimal standalone SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let vals: Vec<f64> = values
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .map(|v| if log { v.log10() } else { v })
            .collect();
        let (mut lo, mut hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        let n = if self.log { (self.hi - self.lo) as usize } else { 4 };
        (0..=n.max(1))
            .map(|k| {
                let v = self.lo + (self.hi - self.lo) * k as f64 / n.max(1) as f64;
                let label = if self.log { format!("1e{}", v.round() as i64) } else { format!("{v:.3}") };
                ((v - self.lo) / (self.hi - self.lo), label)
            })
            .collect()
    }
}

fn y_axis(s: &mut String, axis: &Axis, label: &str) {
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN
    );
    for (f, text) in axis.ticks() {
        let y = HEIGHT - MARGIN - f * (HEIGHT - 2.0 * MARGIN);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{text}</text>"##,
            MARGIN,
            WIDTH - MARGIN,
            MARGIN - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(label)
    );
}

/// Vertical bars, one per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)], log: bool) -> String {
    let mut s = header(title);
    let axis = Axis::fit(bars.iter().map(|b| b.1), log);
    y_axis(&mut s, &axis, y_label);
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;
    for (k, (label, value)) in bars.iter().enumerate() {
        let x = MARGIN + slot * k as f64 + slot * 0.15;
        let base = HEIGHT - MARGIN;
        if let Some(f) = axis.frac(*value) {
            let h = f.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                base - h,
                slot * 0.7,
                COLORS[k % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            base + 16.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Polylines over a shared x axis, with a legend.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_x: bool,
    log_y: bool,
) -> String {
    let mut s = header(title);
    let xa = Axis::fit(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)), log_x);
    let ya = Axis::fit(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)), log_y);
    y_axis(&mut s, &ya, y_label);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
        WIDTH - MARGIN,
        y = HEIGHT - MARGIN
    );
    for (f, text) in xa.ticks() {
        let x = MARGIN + f * (WIDTH - 2.0 * MARGIN);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{text}</text>"#,
            HEIGHT - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    for (k, (name, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = points
            .iter()
            .filter_map(|&(x, y)| {
                let (fx, fy) = (xa.frac(x)?, ya.frac(y)?);
                Some(format!(
                    "{:.1},{:.1}",
                    MARGIN + fx * (WIDTH - 2.0 * MARGIN),
                    HEIGHT - MARGIN - fy * (HEIGHT - 2.0 * MARGIN)
                ))
            })
            .collect();
        if !coords.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                coords.join(" ")
            );
        }
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            ly - 9.0,
            WIDTH - MARGIN - 96.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
