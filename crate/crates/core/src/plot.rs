//! Minimal SVG line plots for run artifacts.

use std::fmt::Write as _;

use crate::scenario::{road_edge_y, RoadGeometry};
use crate::sim::VehicleTrace;

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const ROAD: &str = "#7f7f7f";

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<[f64; 2]>,
    pub color: String,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Round tick positions (1, 2 or 5 times a power of ten) inside `range`.
fn ticks(range: (f64, f64)) -> Vec<f64> {
    let raw = (range.1 - range.0) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (range.0 / step).ceil() as i64;
    let last = (range.1 / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn draw_panel(out: &mut String, panel: &Panel, frame: &Frame) {
    let (l, t, w, h) = (frame.left, frame.top, frame.width, frame.height);
    let _ = writeln!(
        out,
        r##"<rect x="{l:.1}" y="{t:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#000" stroke-width="1"/>"##
    );
    for xv in ticks(frame.x) {
        let xp = frame.px(xv);
        let _ = writeln!(
            out,
            r##"<line x1="{xp:.1}" y1="{t:.1}" x2="{xp:.1}" y2="{:.1}" stroke="#e0e0e0"/><text x="{xp:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
            t + h,
            t + h + 14.0,
            tick_label(xv)
        );
    }
    for yv in ticks(frame.y) {
        let yp = frame.py(yv);
        let _ = writeln!(
            out,
            r##"<line x1="{l:.1}" y1="{yp:.1}" x2="{:.1}" y2="{yp:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
            l + w,
            l - 4.0,
            yp + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
        l + w / 2.0,
        t - 8.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        l + w / 2.0,
        t + h + 30.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        l - 46.0,
        t + h / 2.0,
        l - 46.0,
        t + h / 2.0,
        escape(&panel.y_label)
    );
    for s in &panel.series {
        if s.points.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (i, p) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, frame.px(p[0]), frame.py(p[1]));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            s.color
        );
    }
    let named: Vec<&Series> = panel.series.iter().filter(|s| !s.name.is_empty()).collect();
    for (i, s) in named.iter().enumerate() {
        let y = t + 14.0 + 16.0 * i as f64;
        let x = l + w - 150.0;
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            y - 4.0,
            x + 24.0,
            y - 4.0,
            s.color,
            x + 30.0,
            y,
            escape(&s.name)
        );
    }
}

/// Renders panels stacked vertically into one SVG document.
pub fn render(panels: &[Panel], width: f64, panel_height: f64) -> String {
    let margin_left = 70.0;
    let margin_right = 20.0;
    let margin_top = 30.0;
    let gap = 60.0;
    let height = margin_top + panels.len() as f64 * (panel_height + gap);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let frame = Frame {
            left: margin_left,
            top: margin_top + k as f64 * (panel_height + gap),
            width: width - margin_left - margin_right,
            height: panel_height,
            x: bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p[0]))),
            y: bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p[1]))),
        };
        draw_panel(&mut out, panel, &frame);
    }
    out.push_str("</svg>\n");
    out
}

fn road_series(road: &RoadGeometry, x_min: f64, x_max: f64) -> Vec<Series> {
    let mut xs = vec![x_min, x_max];
    xs.extend([road.x_merge_start, road.x_merge_end].into_iter().filter(|x| *x > x_min && *x < x_max));
    xs.sort_by(f64::total_cmp);
    let lower = xs.iter().map(|&x| [x, road_edge_y(road, x).0]).collect();
    let upper = xs.iter().map(|&x| [x, road_edge_y(road, x).1]).collect();
    let mut out = vec![
        Series {
            name: String::new(),
            points: lower,
            color: ROAD.into(),
            dashed: false,
        },
        Series {
            name: String::new(),
            points: upper,
            color: ROAD.into(),
            dashed: false,
        },
    ];
    let divider_end = road.x_merge_start.min(x_max);
    if divider_end > x_min {
        out.push(Series {
            name: String::new(),
            points: vec![[x_min, road.y_lane], [divider_end, road.y_lane]],
            color: ROAD.into(),
            dashed: true,
        });
    }
    out
}

fn path_series(traces: &[VehicleTrace], dashed: bool, offset: usize) -> Vec<Series> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| Series {
            name: format!("vehicle {} ({})", t.id, t.planner),
            points: t.records.iter().map(|r| [r.x, r.y]).collect(),
            color: PALETTE[(i + offset) % PALETTE.len()].into(),
            dashed: dashed && i > 0,
        })
        .collect()
}

fn path_panel(title: &str, road: &RoadGeometry, traces: &[VehicleTrace], x_range: (f64, f64)) -> Panel {
    let mut series = road_series(road, x_range.0, x_range.1);
    series.extend(path_series(traces, true, 0));
    Panel {
        title: title.into(),
        x_label: "x [m]".into(),
        y_label: "y [m]".into(),
        series,
    }
}

fn x_range<'a>(traces: impl Iterator<Item = &'a VehicleTrace>) -> (f64, f64) {
    let xs = traces.flat_map(|t| t.records.iter().map(|r| r.x));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Vehicle paths over the road outline.
pub fn paths_svg(road: &RoadGeometry, traces: &[VehicleTrace]) -> String {
    let range = x_range(traces.iter());
    render(&[path_panel("Paths", road, traces, range)], 1000.0, 260.0)
}

/// One path panel per planner run, sharing the x range.
pub fn compare_paths_svg(road: &RoadGeometry, runs: &[(String, Vec<VehicleTrace>)]) -> String {
    let range = x_range(runs.iter().flat_map(|(_, t)| t.iter()));
    let panels: Vec<Panel> = runs
        .iter()
        .map(|(name, traces)| path_panel(name, road, traces, range))
        .collect();
    render(&panels, 1000.0, 220.0)
}

/// A state variable of every vehicle against time.
pub fn state_svg(title: &str, y_label: &str, traces: &[VehicleTrace], pick: fn(&crate::sim::TraceRecord) -> f64) -> String {
    let series = traces
        .iter()
        .enumerate()
        .map(|(i, t)| Series {
            name: format!("vehicle {} ({})", t.id, t.planner),
            points: t.records.iter().map(|r| [r.t, pick(r)]).collect(),
            color: PALETTE[i % PALETTE.len()].into(),
            dashed: i > 0,
        })
        .collect();
    render(
        &[Panel {
            title: title.into(),
            x_label: "t [s]".into(),
            y_label: y_label.into(),
            series,
        }],
        900.0,
        300.0,
    )
}

/// File name and body of every per-run figure.
pub fn run_figures(road: &RoadGeometry, traces: &[VehicleTrace]) -> Vec<(&'static str, String)> {
    vec![
        ("paths.svg", paths_svg(road, traces)),
        ("sideslip.svg", state_svg("Sideslip angle", "beta [rad]", traces, |r| r.beta)),
        ("yaw.svg", state_svg("Yaw angle", "psi [rad]", traces, |r| r.psi)),
        ("yaw_rate.svg", state_svg("Yaw rate", "r [rad/s]", traces, |r| r.yaw_rate)),
        ("speed.svg", state_svg("Longitudinal speed", "v [m/s]", traces, |r| r.v)),
    ]
}
