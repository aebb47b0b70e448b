//! Dependency-free SVG line plots for the analysis reports.
//!
//! Renders one or more (x, y) series as polylines with markers, axes with
//! 1-2-5 ticks, an optional log-scale y axis, and a legend. The output is
//! a standalone `<svg>` document suitable for writing to a file.

use crate::error::{CoreError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One named line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A complete plot description.
#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Log-scale y axis; every y must then be strictly positive.
    pub log_y: bool,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

/// Tick positions covering [lo, hi] at a 1-2-5 step, at most ~6 ticks.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag * if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + step * 1e-9 {
        // Snap values like 0.30000000000000004 back onto the grid.
        let snapped = (t / step).round() * step;
        ticks.push(if snapped.abs() < step * 1e-9 { 0.0 } else { snapped });
        t += step;
    }
    ticks
}

/// Decade ticks covering [lo, hi] in raw (not log) units.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let first = lo.log10().floor() as i32;
    let last = hi.log10().ceil() as i32;
    let mut ticks: Vec<f64> = (first..=last)
        .map(|e| 10f64.powi(e))
        .filter(|t| *t >= lo / 1.0001 && *t <= hi * 1.0001)
        .collect();
    if ticks.len() < 2 {
        ticks = vec![lo, hi];
    }
    ticks
}

impl LinePlot {
    /// Renders the plot to a standalone SVG document.
    pub fn render(&self) -> Result<String> {
        if self.series.is_empty() || self.series.iter().all(|s| s.points.is_empty()) {
            return Err(CoreError::Config("nothing to plot".into()));
        }
        let points: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .collect();
        if points
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(CoreError::Numeric("plot points must be finite".into()));
        }
        if self.log_y && points.iter().any(|(_, y)| *y <= 0.0) {
            return Err(CoreError::Config(
                "log-scale plots need strictly positive y values".into(),
            ));
        }

        let map_y = |y: f64| if self.log_y { y.log10() } else { y };
        let (mut x_lo, mut x_hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
                (lo.min(*x), hi.max(*x))
            });
        let (mut y_lo, mut y_hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| {
                (lo.min(map_y(*y)), hi.max(map_y(*y)))
            });
        if x_lo == x_hi {
            x_lo -= 1.0;
            x_hi += 1.0;
        }
        if y_lo == y_hi {
            y_lo -= 1.0;
            y_hi += 1.0;
        }
        let x_pad = 0.04 * (x_hi - x_lo);
        let y_pad = 0.06 * (y_hi - y_lo);
        let (x_lo, x_hi) = (x_lo - x_pad, x_hi + x_pad);
        let (y_lo, y_hi) = (y_lo - y_pad, y_hi + y_pad);

        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let py = |y: f64| MARGIN_T + plot_h - (map_y(y) - y_lo) / (y_hi - y_lo) * plot_h;

        let mut svg = format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" ",
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
                "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" ",
                "font-weight=\"bold\">{title}</text>\n"
            ),
            w = WIDTH,
            h = HEIGHT,
            tx = WIDTH / 2.0,
            title = escape(&self.title)
        );

        // Axes.
        let (x0, y0) = (MARGIN_L, MARGIN_T + plot_h);
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN_T}\" stroke=\"black\"/>\n"
        ));

        for t in linear_ticks(x_lo, x_hi) {
            let x = px(t);
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{y0}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\n",
                y0 + 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                y0 + 19.0,
                format_tick(t)
            ));
        }
        let y_ticks = if self.log_y {
            log_ticks(10f64.powf(y_lo), 10f64.powf(y_hi))
        } else {
            linear_ticks(y_lo, y_hi)
        };
        for t in y_ticks {
            let y = py(t);
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{x0}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
                x0 - 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                x0 - 8.0,
                y + 4.0,
                format_tick(t)
            ));
        }

        // Axis labels.
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_L + plot_w / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        ));
        svg.push_str(&format!(
            concat!(
                "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" ",
                "transform=\"rotate(-90 18 {:.1})\">{}</text>\n"
            ),
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            escape(&self.y_label)
        ));

        // Series.
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = series
                .points
                .iter()
                .map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y)))
                .collect();
            if coords.len() > 1 {
                svg.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                    coords.join(" ")
                ));
            }
            for c in &coords {
                let (cx, cy) = c.split_once(',').expect("coordinate pair");
                svg.push_str(&format!(
                    "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"2.5\" fill=\"{color}\"/>\n"
                ));
            }
        }

        // Legend (skipped for a single unlabeled series).
        let labeled: Vec<(usize, &Series)> = self
            .series
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.label.is_empty())
            .collect();
        for (row, (i, series)) in labeled.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let y = MARGIN_T + 14.0 + row as f64 * 18.0;
            let x = MARGIN_L + plot_w - 150.0;
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                x + 22.0
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
                x + 28.0,
                y + 4.0,
                escape(&series.label)
            ));
        }

        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(log_y: bool) -> LinePlot {
        LinePlot {
            title: "Depth < cost & gain".into(),
            x_label: "step".into(),
            y_label: "delta".into(),
            series: vec![
                Series {
                    label: "easy".into(),
                    points: vec![(1.0, 0.5), (2.0, 0.25), (3.0, 0.125)],
                },
                Series {
                    label: "hard".into(),
                    points: vec![(1.0, 1.0), (2.0, 0.9), (3.0, 0.7)],
                },
            ],
            log_y,
        }
    }

    #[test]
    fn renders_axes_series_and_legend() {
        let svg = plot(false).render().unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("easy") && svg.contains("hard"));
        assert!(svg.matches("<circle").count() == 6);
        assert!(svg.contains("Depth &lt; cost &amp; gain"));
    }

    #[test]
    fn log_scale_renders_decades_and_rejects_nonpositive() {
        let svg = plot(true).render().unwrap();
        assert!(svg.contains("<polyline"));
        let mut bad = plot(true);
        bad.series[0].points[0].1 = 0.0;
        assert!(matches!(bad.render().unwrap_err(), CoreError::Config(_)));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let mut empty = plot(false);
        empty.series.clear();
        assert!(matches!(empty.render().unwrap_err(), CoreError::Config(_)));
        let mut nan = plot(false);
        nan.series[0].points[1].1 = f64::NAN;
        assert!(matches!(nan.render().unwrap_err(), CoreError::Numeric(_)));
    }

    #[test]
    fn single_point_series_still_render() {
        let one = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                label: String::new(),
                points: vec![(2.0, 3.0)],
            }],
            log_y: false,
        };
        let svg = one.render().unwrap();
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn tick_formatting_is_compact() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(2.5), "2.5");
        assert_eq!(format_tick(-0.3), "-0.3");
        assert_eq!(format_tick(123456.0), "1e5");
        assert_eq!(format_tick(0.0002), "2e-4");
        let ticks = linear_ticks(0.0, 1.0);
        assert!(ticks.contains(&0.0) && ticks.contains(&1.0));
        assert!(ticks.len() >= 4 && ticks.len() <= 8);
    }
}
