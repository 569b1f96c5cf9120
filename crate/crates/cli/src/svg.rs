//! Minimal static SVG 1.1 line plots.

use std::fmt::Write;

use erw_core::experiment::PlotKind;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Line {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub kind: PlotKind,
    pub lines: Vec<Line>,
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    pixel_lo: f64,
    pixel_hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool, pixel_lo: f64, pixel_hi: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        Self {
            log,
            lo,
            hi,
            pixel_lo,
            pixel_hi,
        }
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        self.pixel_lo + (v - self.lo) / (self.hi - self.lo) * (self.pixel_hi - self.pixel_lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (lo, hi) = (self.lo as i32, self.hi as i32);
            let step = ((hi - lo) / 8).max(1) as usize;
            (lo..=hi)
                .step_by(step)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            (0..=5)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 5.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Plot {
    pub fn render(&self) -> String {
        let (x_log, y_log) = match self.kind {
            PlotKind::LogLog => (true, true),
            PlotKind::Cdf => (false, false),
            PlotKind::Trace => (true, false),
        };
        let keep = |log: bool, v: f64| v.is_finite() && (!log || v > 0.0);
        let points: Vec<Vec<(f64, f64)>> = self
            .lines
            .iter()
            .map(|l| {
                l.x.iter()
                    .zip(&l.y)
                    .map(|(&x, &y)| (x, y))
                    .filter(|&(x, y)| keep(x_log, x) && keep(y_log, y))
                    .collect()
            })
            .collect();
        let plot_right = WIDTH - MARGIN_RIGHT;
        let plot_bottom = HEIGHT - MARGIN_BOTTOM;
        let xa = Axis::new(
            points.iter().flatten().map(|p| p.0),
            x_log,
            MARGIN_LEFT,
            plot_right,
        );
        let ya = Axis::new(
            points.iter().flatten().map(|p| p.1),
            y_log,
            plot_bottom,
            MARGIN_TOP,
        );

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#
        );
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (MARGIN_LEFT + plot_right) / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            plot_right - MARGIN_LEFT,
            plot_bottom - MARGIN_TOP
        );
        for (v, label) in xa.ticks() {
            let px = xa.map(v);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{MARGIN_TOP}" x2="{px:.2}" y2="{plot_bottom}" stroke="#dddddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                plot_bottom + 16.0
            );
        }
        for (v, label) in ya.ticks() {
            let py = ya.map(v);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_LEFT}" y1="{py:.2}" x2="{plot_right}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                MARGIN_LEFT - 6.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (MARGIN_LEFT + plot_right) / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (MARGIN_TOP + plot_bottom) / 2.0,
            escape(&self.y_label)
        );
        for (i, (line, pts)) in self.lines.iter().zip(&points).enumerate() {
            let color = COLORS[i % COLORS.len()];
            if !pts.is_empty() {
                let path: Vec<String> = pts
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", xa.map(x), ya.map(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            let ly = MARGIN_TOP + 16.0 * i as f64 + 8.0;
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
                plot_right + 10.0,
                plot_right + 30.0,
                plot_right + 36.0,
                ly + 4.0,
                escape(&line.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(kind: PlotKind) -> Plot {
        Plot {
            title: "Var <S_n>".into(),
            x_label: "n".into(),
            y_label: "variance".into(),
            kind,
            lines: vec![
                Line {
                    name: "a".into(),
                    x: vec![1.0, 10.0, 100.0],
                    y: vec![1.0, 10.0, 100.0],
                },
                Line {
                    name: "b & c".into(),
                    x: vec![1.0, 10.0],
                    y: vec![0.0, f64::NAN],
                },
            ],
        }
    }

    #[test]
    fn renders_well_formed_svg() {
        let s = plot(PlotKind::LogLog).render();
        assert!(s.starts_with("<?xml"));
        assert!(s.contains(r#"version="1.1""#));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("Var &lt;S_n&gt;"));
        assert!(s.contains("b &amp; c"));
        // non-positive points are dropped on log axes, leaving one polyline
        assert_eq!(s.matches("<polyline").count(), 1);
        assert!(!s.contains("NaN"));
    }

    #[test]
    fn linear_axes_keep_zero() {
        let s = plot(PlotKind::Cdf).render();
        assert_eq!(s.matches("<polyline").count(), 2);
    }
}
