//! Minimal standalone SVG line charts.

use std::fmt::Write;

use crate::error::{HarnessError, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 64.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineChart {
    pub title: String,
    /// Second title line, usually run metadata.
    pub subtitle: String,
    pub x_label: String,
    pub y_label: String,
    /// Log-scale y axis; falls back to linear when some value is not positive.
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Vertical markers at `x` with a label.
    pub vlines: Vec<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').to_string()
    }
}

/// About five round-numbered ticks covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

impl LineChart {
    pub fn render(&self) -> Result<String> {
        let all: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if all.is_empty() {
            return Err(HarnessError::Config("nothing to plot: no data points".into()));
        }
        if all.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(HarnessError::Config("cannot plot non-finite values".into()));
        }
        let log_y = self.log_y && all.iter().all(|&(_, y)| y > 0.0);
        let fy = |y: f64| if log_y { y.log10() } else { y };
        let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(x, _)| (a.min(x), b.max(x)));
        let (mut y0, mut y1) = all
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, y)| (a.min(fy(y)), b.max(fy(y))));
        for (x, _) in &self.vlines {
            x0 = x0.min(*x);
            x1 = x1.max(*x);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 1.0;
            x1 += 1.0;
        }
        if y1 - y0 < 1e-12 {
            let pad = if y0.abs() > 0.0 { y0.abs() * 0.1 } else { 1.0 };
            y0 -= pad;
            y1 += pad;
        }
        if log_y {
            y0 = y0.floor();
            y1 = y1.ceil();
        } else {
            let pad = 0.05 * (y1 - y0);
            y0 -= pad;
            y1 += pad;
        }
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |v: f64| TOP + (1.0 - (v - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{LEFT}" y="24" font-size="15" font-weight="bold">{}</text>"#, escape(&self.title));
        let _ = writeln!(s, r##"<text x="{LEFT}" y="44" fill="#555">{}</text>"##, escape(&self.subtitle));
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        for t in linear_ticks(x0, x1) {
            let x = px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e5e5e5"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 18.0,
                tick_label(t)
            );
        }
        let yticks: Vec<f64> = if log_y {
            (y0 as i32..=y1 as i32).map(f64::from).collect()
        } else {
            linear_ticks(y0, y1)
        };
        for t in yticks {
            let y = py(t);
            let label = if log_y { format!("1e{}", t as i32) } else { tick_label(t) };
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let y_label = if log_y { format!("{} (log scale)", self.y_label) } else { self.y_label.clone() };
        let _ = writeln!(
            s,
            r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&y_label)
        );
        for (x, label) in &self.vlines {
            let x = px(*x);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#444" stroke-dasharray="2 3"/><text x="{:.2}" y="{:.2}" fill="#444">{}</text>"##,
                TOP + ph,
                x + 4.0,
                TOP + 14.0,
                escape(label)
            );
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(fy(y))))
                .collect();
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                pts.join(" ")
            );
            if series.points.len() <= 40 {
                for p in &pts {
                    let (cx, cy) = p.split_once(',').expect("formatted pair");
                    let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
                }
            }
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 14.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover_range() {
        assert_eq!(linear_ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = linear_ticks(0.013, 0.087);
        assert!(t.iter().all(|v| (0.013..=0.087).contains(v)));
        assert!(t.len() >= 3);
    }

    #[test]
    fn renders_labels_and_one_polyline_per_series() {
        let chart = LineChart {
            title: "risk <vs> length".into(),
            subtitle: "n=4".into(),
            x_label: "t".into(),
            y_label: "loss".into(),
            log_y: true,
            series: vec![
                Series::new("a", vec![(1.0, 1e-3), (2.0, 1e-4)]),
                Series::new("b", vec![(1.0, 0.1), (2.0, 0.2)]).dashed(),
            ],
            vlines: vec![(1.5, "T".into())],
        };
        let svg = chart.render().unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("risk &lt;vs&gt; length"));
        assert!(svg.contains("(log scale)"));
        assert!(svg.contains("1e-4"));
    }

    #[test]
    fn zero_values_fall_back_to_linear_axis() {
        let chart = LineChart {
            log_y: true,
            series: vec![Series::new("zero", vec![(1.0, 0.0), (5.0, 0.0)])],
            ..LineChart::default()
        };
        let svg = chart.render().unwrap();
        assert!(!svg.contains("log scale"));
    }

    #[test]
    fn empty_chart_is_an_error() {
        assert!(LineChart::default().render().is_err());
        let chart = LineChart {
            series: vec![Series::new("nan", vec![(1.0, f64::NAN)])],
            ..LineChart::default()
        };
        assert!(chart.render().is_err());
    }
}
