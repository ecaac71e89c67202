//! Heatmap PNGs and line/scatter SVGs.
//!
//! Heatmaps use a viridis approximation (nine anchors, linear in between),
//! whose luminance increases monotonically, scaled to each matrix's own
//! min/max.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;

use crate::error::{PipelineError, Result};

const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (VIRIDIS[i][c] + f * (VIRIDIS[i + 1][c] - VIRIDIS[i][c])).round() as u8;
    }
    px
}

/// Averages `side × side` values over square blocks so the result has at most
/// `max_side` rows. Returns the values and the new side length.
pub fn block_average(values: &[f32], side: usize, max_side: usize) -> (Vec<f32>, usize) {
    let factor = side.div_ceil(max_side.max(1)).max(1);
    if factor == 1 {
        return (values.to_vec(), side);
    }
    let out_side = side.div_ceil(factor);
    let mut out = vec![0f32; out_side * out_side];
    for bi in 0..out_side {
        for bj in 0..out_side {
            let (mut s, mut n) = (0f64, 0usize);
            for i in bi * factor..((bi + 1) * factor).min(side) {
                for j in bj * factor..((bj + 1) * factor).min(side) {
                    s += values[i * side + j] as f64;
                    n += 1;
                }
            }
            out[bi * out_side + bj] = (s / n as f64) as f32;
        }
    }
    (out, out_side)
}

pub fn heatmap_image(values: &[f32], side: usize) -> RgbImage {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo) as f64;
    RgbImage::from_fn(side as u32, side as u32, |x, y| {
        let v = values[y as usize * side + x as usize];
        let t = if span > 0.0 { (v - lo) as f64 / span } else { 0.0 };
        image::Rgb(viridis(t))
    })
}

pub fn write_heatmap_png(values: &[f32], side: usize, path: &Path) -> Result<()> {
    heatmap_image(values, side)
        .save(path)
        .map_err(|e| PipelineError::Data(format!("cannot write {}: {e}", path.display())))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axis range padded by 5%, or `[v − 1, v + 1]` when all values coincide.
fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, svg: &mut String, xticks: &[f64], xlabel: &str, ylabel: &str) {
        let (x0, y0, w, h) = (self.x0, self.y0, self.w, self.h);
        let _ = writeln!(svg, r#"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#);
        for &t in xticks {
            let x = self.px(t);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
                y0 + h,
                y0 + h + 4.0,
                y0 + h + 15.0,
                fmt_tick(t)
            );
        }
        for i in 0..=4 {
            let v = self.yr.0 + (self.yr.1 - self.yr.0) * i as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                y + 3.5,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            y0 + h + 30.0,
            esc(xlabel)
        );
        let (lx, ly) = (x0 - 42.0, y0 + h / 2.0);
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.1}" y="{ly:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.1} {ly:.1})">{}</text>"#,
            esc(ylabel)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One polyline with markers per series, plus a legend.
pub fn line_plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (width, height) = (720.0, 420.0);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let xr = range(xs);
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain([0.0]));
    let f = Frame { x0: 70.0, y0: 40.0, w: 460.0, h: 320.0, xr, yr };
    let mut xticks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xticks.sort_by(f64::total_cmp);
    xticks.dedup();
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#, f.x0 + f.w / 2.0, esc(title));
    f.axes(&mut svg, &xticks, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, pts.join(" "));
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, f.px(x), f.py(y));
        }
        let ly = 50.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="550" y1="{ly:.1}" x2="570" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="576" y="{:.1}" font-size="11">{}</text>"#,
            ly + 4.0,
            esc(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub struct ScatterPanel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub points: Vec<(String, f64, f64)>,
    /// Least-squares line as `(slope, intercept)`.
    pub fit: Option<(f64, f64)>,
}

/// Panels laid out four per row.
pub fn scatter_grid_svg(title: &str, panels: &[ScatterPanel]) -> String {
    let cols = 4usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let (pw, ph) = (280.0, 250.0);
    let width = pw * cols as f64;
    let height = 40.0 + ph * rows as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#, width / 2.0, esc(title));
    for (i, p) in panels.iter().enumerate() {
        let (ox, oy) = ((i % cols) as f64 * pw, 40.0 + (i / cols) as f64 * ph);
        let f = Frame {
            x0: ox + 60.0,
            y0: oy + 30.0,
            w: pw - 80.0,
            h: ph - 80.0,
            xr: range(p.points.iter().map(|q| q.1)),
            yr: range(p.points.iter().map(|q| q.2)),
        };
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#, f.x0 + f.w / 2.0, oy + 20.0, esc(&p.title));
        let xt = [f.xr.0, (f.xr.0 + f.xr.1) / 2.0, f.xr.1];
        f.axes(&mut svg, &xt, &p.xlabel, &p.ylabel);
        if let Some((a, b)) = p.fit {
            let (xa, xb) = f.xr;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                f.px(xa),
                f.py(a * xa + b).clamp(f.y0, f.y0 + f.h),
                f.px(xb),
                f.py(a * xb + b).clamp(f.y0, f.y0 + f.h)
            );
        }
        for (label, x, y) in &p.points {
            let (cx, cy) = (f.px(*x), f.py(*y));
            let _ = writeln!(
                svg,
                r##"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="#1f77b4"><title>{}</title></circle>"##,
                esc(label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
