//! Minimal self-contained SVG plots: line plots and JSI heat maps.

use std::fmt::Write as _;

use bfc_core::franson::FringeScan;
use bfc_core::JsiMatrix;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SvgError {
    #[error("plot `{0}` has no data")]
    Empty(String),
    #[error("series `{0}`: x and y lengths differ")]
    Ragged(String),
    #[error("series `{0}` contains non-finite values")]
    NonFinite(String),
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Series {
            label: label.into(),
            xs,
            ys,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        (lo - pad, hi + pad)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(title)
    );
}

pub fn line_plot(plot: &LinePlot) -> Result<String, SvgError> {
    if plot.series.is_empty() || plot.series.iter().all(|s| s.xs.is_empty()) {
        return Err(SvgError::Empty(plot.title.clone()));
    }
    for s in &plot.series {
        if s.xs.len() != s.ys.len() {
            return Err(SvgError::Ragged(s.label.clone()));
        }
        if s.xs.iter().chain(&s.ys).any(|v| !v.is_finite()) {
            return Err(SvgError::NonFinite(s.label.clone()));
        }
    }
    let (x0, x1) = bounds(plot.series.iter().flat_map(|s| s.xs.iter().copied()));
    let (y0, y1) = bounds(plot.series.iter().flat_map(|s| s.ys.iter().copied()));
    let (y0, y1) = (y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, &plot.title);
    let (bx, by) = (LEFT, TOP + ph);
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#,
        LEFT + pw
    );
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}" stroke="black"/>"#
    );
    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(
            out,
            r#"<line class="tick" x1="{x:.2}" y1="{by}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            by + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            by + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(
            out,
            r#"<line class="tick" x1="{}" y1="{y:.2}" x2="{bx}" y2="{y:.2}" stroke="black"/>"#,
            bx - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            bx - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&plot.y_label)
    );
    for (i, s) in plot.series.iter().enumerate() {
        if s.xs.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (j, (x, y)) in s.xs.iter().zip(&s.ys).enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if j == 0 { "M" } else { " L" },
                px(*x),
                py(*y)
            );
        }
        let _ = writeln!(
            out,
            r#"<path class="series" d="{d}" fill="none" stroke="{color}" stroke-width="1.2"/>"#
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 10.0;
        let _ = writeln!(
            out,
            r#"<line class="legend" x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 25.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Fringe trace plus the upper and lower envelope `½(1 ± V)` of an analytic scan.
pub fn fringe_plot(
    scan: &FringeScan,
    title: &str,
    x_label: &str,
    x_scale: f64,
) -> Result<String, SvgError> {
    let xs: Vec<f64> = scan.delays_fs.iter().map(|d| d * x_scale).collect();
    let mut series = vec![Series::new(
        "coincidences",
        xs.clone(),
        scan.coincidences.clone(),
    )];
    if let Some(v) = &scan.visibility {
        series.push(Series::new(
            "envelope",
            xs.clone(),
            v.iter().map(|v| 0.5 * (1.0 + v)).collect(),
        ));
        series.push(Series::new(
            "",
            xs,
            v.iter().map(|v| 0.5 * (1.0 - v)).collect(),
        ));
    }
    line_plot(&LinePlot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "normalized coincidence rate".into(),
        series,
    })
}

/// White to blue heat map, one `<rect class="cell">` per matrix entry.
pub fn heat_map(title: &str, jsi: &JsiMatrix) -> Result<String, SvgError> {
    let n = jsi.size();
    if n == 0 {
        return Err(SvgError::Empty(title.into()));
    }
    let max = jsi.rows().iter().flatten().copied().fold(0.0, f64::max);
    let side = (HEIGHT - TOP - BOTTOM).min(WIDTH - LEFT - RIGHT);
    let cell = side / n as f64;
    let mut out = String::new();
    header(&mut out, title);
    let ks: Vec<i32> = jsi.ks().collect();
    for (r, ks_r) in ks.iter().enumerate() {
        for (c, ks_c) in ks.iter().enumerate() {
            let v = jsi.at(r, c);
            let f = if max > 0.0 {
                (v / max).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let shade = |lo: f64| (255.0 - f * (255.0 - lo)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({},{},255)"><title>S{} I{}: {}</title></rect>"#,
                LEFT + c as f64 * cell,
                TOP + r as f64 * cell,
                shade(31.0),
                shade(119.0),
                ks_r,
                ks_c,
                v
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">S{ks_r}</text>"#,
            LEFT - 6.0,
            TOP + (r as f64 + 0.5) * cell + 4.0
        );
    }
    for (c, k) in ks.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">I{k}</text>"#,
            LEFT + (c as f64 + 0.5) * cell,
            TOP + side + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + side,
        LEFT + side
    );
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + side
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bfc_core::JsiNormalization;

    #[test]
    fn one_path_per_series() {
        let plot = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series::new("a", vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]),
                Series::new("b", vec![0.0, 2.0], vec![0.0, 1.0]),
            ],
        };
        let svg = line_plot(&plot).unwrap();
        assert_eq!(svg.matches("<path").count(), 2);
        assert_eq!(svg.matches(r#"class="axis""#).count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn two_point_line() {
        let plot = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::new("a", vec![0.0, 1.0], vec![0.0, 1.0])],
        };
        assert_eq!(line_plot(&plot).unwrap().matches("<path").count(), 1);
    }

    #[test]
    fn empty_and_bad_input_rejected() {
        let mut plot = LinePlot {
            title: "t".into(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![],
        };
        assert_eq!(line_plot(&plot), Err(SvgError::Empty("t".into())));
        plot.series.push(Series::new("a", vec![0.0], vec![]));
        assert_eq!(line_plot(&plot), Err(SvgError::Ragged("a".into())));
        plot.series[0] = Series::new("a", vec![0.0], vec![f64::NAN]);
        assert_eq!(line_plot(&plot), Err(SvgError::NonFinite("a".into())));
    }

    #[test]
    fn heat_map_cells() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.5],
        ];
        let jsi = JsiMatrix::from_rows(2, &rows, JsiNormalization::Counts).unwrap();
        let svg = heat_map("jsi", &jsi).unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 9);
        // the brightest cell is fully saturated
        assert!(svg.contains("rgb(31,119,255)"));
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(fmt_tick(-0.0), "0");
        assert_eq!(fmt_tick(2.5), "2.5");
    }
}
