//! Loss curves and hypersphere projections rendered to SVG or PNG.
//!
//! PNG output carries the same geometry as SVG but no text; series colors
//! follow the same order.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pca::Pca2;
use crate::tensor::Matrix;
use crate::trainer::{class_embeddings, TrainingLog};

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const MARGIN: f64 = 60.0;
const PALETTE: [(u8, u8, u8); 6] = [
    (214, 39, 40),
    (31, 119, 180),
    (44, 160, 44),
    (148, 103, 189),
    (255, 127, 14),
    (127, 127, 127),
];

fn css((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpherePlot {
    pub title: String,
    pub centroid: (f64, f64),
    pub radius: f64,
    pub mentions: Vec<(f64, f64)>,
    /// Other class centroids projected with the same axes.
    pub others: Vec<(String, (f64, f64))>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Figure {
    Lines(LinePlot),
    Sphere(SpherePlot),
}

/// Per-level losses against the step index.
pub fn energy_plot(log: &TrainingLog) -> Result<LinePlot> {
    if log.records.is_empty() {
        return Err(Error::Plot("training log has no records".into()));
    }
    let series = |label: &str, f: fn(&crate::trainer::LogRecord) -> f64| Series {
        label: label.into(),
        points: log.records.iter().map(|r| (r.step as f64, f(r))).collect(),
    };
    Ok(LinePlot {
        title: "Loss per level".into(),
        x_label: "step".into(),
        y_label: "loss".into(),
        series: vec![
            series("token", |r| r.l_tok),
            series("sentence", |r| r.l_sen),
            series("document", |r| r.l_doc),
        ],
    })
}

/// PCA of one class's centroid and mention embeddings.
pub fn sphere_plot(
    model: &Model,
    docs: &[Document],
    cap: usize,
    class: &str,
) -> Result<SpherePlot> {
    let c = model
        .spaces
        .class_index(class)
        .ok_or_else(|| Error::Plot(format!("unknown event class '{class}'")))?;
    let emb = class_embeddings(model, docs, cap, c)?;
    if emb.rows() == 0 {
        return Err(Error::Plot(format!("class '{class}' has no mentions")));
    }
    let centroid = model.spheres.centroid(c).to_vec();
    let mut rows: Vec<Vec<f64>> = vec![centroid.clone()];
    rows.extend((0..emb.rows()).map(|r| emb.row(r).to_vec()));
    let pca = Pca2::fit(&Matrix::from_rows(&rows))?;
    let others = (0..model.spheres.num_classes())
        .filter(|&k| k != c)
        .map(|k| {
            (
                model.spaces.event_classes()[k].clone(),
                pca.project(model.spheres.centroid(k)),
            )
        })
        .collect();
    Ok(SpherePlot {
        title: format!("Event class {class}"),
        centroid: pca.project(&centroid),
        radius: model.spheres.radius(c),
        mentions: (0..emb.rows()).map(|r| pca.project(emb.row(r))).collect(),
        others,
    })
}

/// Data-to-pixel mapping.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(points: impl Iterator<Item = (f64, f64)>, equal_aspect: bool) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = (*hi - *lo).max(1e-9);
            *lo -= 0.05 * span;
            *hi += 0.05 * span;
        };
        pad(&mut x0, &mut x1);
        pad(&mut y0, &mut y1);
        let mut f = Frame { x0, x1, y0, y1 };
        if equal_aspect {
            let sx = (f.x1 - f.x0) / (WIDTH as f64 - 2.0 * MARGIN);
            let sy = (f.y1 - f.y0) / (HEIGHT as f64 - 2.0 * MARGIN);
            let s = sx.max(sy);
            let (cx, cy) = ((f.x0 + f.x1) / 2.0, (f.y0 + f.y1) / 2.0);
            let hw = s * (WIDTH as f64 - 2.0 * MARGIN) / 2.0;
            let hh = s * (HEIGHT as f64 - 2.0 * MARGIN) / 2.0;
            f = Frame {
                x0: cx - hw,
                x1: cx + hw,
                y0: cy - hh,
                y1: cy + hh,
            };
        }
        f
    }

    fn px(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let w = WIDTH as f64 - 2.0 * MARGIN;
        let h = HEIGHT as f64 - 2.0 * MARGIN;
        (
            MARGIN + (x - self.x0) / (self.x1 - self.x0) * w,
            HEIGHT as f64 - MARGIN - (y - self.y0) / (self.y1 - self.y0) * h,
        )
    }

    fn x_scale(&self) -> f64 {
        (WIDTH as f64 - 2.0 * MARGIN) / (self.x1 - self.x0)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2,
        escape(title)
    );
}

fn svg_axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (l, r) = (MARGIN, WIDTH as f64 - MARGIN);
    let (t, b) = (MARGIN, HEIGHT as f64 - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 4.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let (px, _) = frame.px((fx, frame.y0));
        let (_, py) = frame.px((frame.x0, fy));
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            b + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            py + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2,
        HEIGHT - 16,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2,
        HEIGHT / 2,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Figure {
    pub fn to_svg(&self) -> String {
        let mut out = String::new();
        match self {
            Figure::Lines(p) => {
                let frame = Frame::new(
                    p.series.iter().flat_map(|s| s.points.iter().copied()),
                    false,
                );
                svg_open(&mut out, &p.title);
                svg_axes(&mut out, &frame, &p.x_label, &p.y_label);
                for (k, s) in p.series.iter().enumerate() {
                    let color = css(PALETTE[k % PALETTE.len()]);
                    let pts: Vec<String> = s
                        .points
                        .iter()
                        .map(|&pt| {
                            let (x, y) = frame.px(pt);
                            format!("{x:.2},{y:.2}")
                        })
                        .collect();
                    let ys: Vec<String> = s.points.iter().map(|(_, y)| y.to_string()).collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline data-label="{}" data-y="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                        escape(&s.label),
                        ys.join(" "),
                        pts.join(" ")
                    );
                    let ly = MARGIN + 4.0 + 18.0 * k as f64;
                    let lx = WIDTH as f64 - MARGIN - 110.0;
                    let _ = writeln!(
                        out,
                        r#"<rect x="{lx}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                        ly - 4.0,
                        lx + 20.0,
                        ly + 2.0,
                        escape(&s.label)
                    );
                }
            }
            Figure::Sphere(p) => {
                let (cx, cy) = p.centroid;
                let bounds = p.mentions.iter().copied().chain([
                    (cx - p.radius, cy - p.radius),
                    (cx + p.radius, cy + p.radius),
                ]);
                let frame = Frame::new(bounds, true);
                svg_open(&mut out, &p.title);
                svg_axes(&mut out, &frame, "PC1", "PC2");
                let (px, py) = frame.px(p.centroid);
                let rad = p.radius * frame.x_scale();
                let _ = writeln!(
                    out,
                    r##"<circle cx="{px:.2}" cy="{py:.2}" r="{rad:.2}" fill="none" stroke="#1f77b4" stroke-dasharray="6 4"/>"##
                );
                for &m in &p.mentions {
                    let (x, y) = frame.px(m);
                    let _ = writeln!(
                        out,
                        r##"<circle class="mention" cx="{x:.2}" cy="{y:.2}" r="3" fill="#d62728" fill-opacity="0.6"/>"##
                    );
                }
                for (name, c) in &p.others {
                    let (x, y) = frame.px(*c);
                    if (MARGIN..=WIDTH as f64 - MARGIN).contains(&x)
                        && (MARGIN..=HEIGHT as f64 - MARGIN).contains(&y)
                    {
                        let _ = writeln!(
                            out,
                            r##"<path d="M{:.1} {:.1} l8 8 m0 -8 l-8 8" stroke="#7f7f7f"/><text x="{:.1}" y="{:.1}" fill="#7f7f7f">{}</text>"##,
                            x - 4.0,
                            y - 4.0,
                            x + 6.0,
                            y - 6.0,
                            escape(name)
                        );
                    }
                }
                let _ = writeln!(
                    out,
                    r##"<path d="M{:.1} {:.1} l10 10 m0 -10 l-10 10" stroke="#1f77b4" stroke-width="2"/>"##,
                    px - 5.0,
                    py - 5.0
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn to_png(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
        let black = Rgb([0, 0, 0]);
        let (l, r) = (MARGIN, WIDTH as f64 - MARGIN);
        let (t, b) = (MARGIN, HEIGHT as f64 - MARGIN);
        line(&mut img, (l, t), (l, b), black);
        line(&mut img, (l, b), (r, b), black);
        match self {
            Figure::Lines(p) => {
                let frame = Frame::new(
                    p.series.iter().flat_map(|s| s.points.iter().copied()),
                    false,
                );
                for (k, s) in p.series.iter().enumerate() {
                    let (cr, cg, cb) = PALETTE[k % PALETTE.len()];
                    let color = Rgb([cr, cg, cb]);
                    for w in s.points.windows(2) {
                        line(&mut img, frame.px(w[0]), frame.px(w[1]), color);
                    }
                    if s.points.len() == 1 {
                        dot(&mut img, frame.px(s.points[0]), color);
                    }
                }
            }
            Figure::Sphere(p) => {
                let (cx, cy) = p.centroid;
                let bounds = p.mentions.iter().copied().chain([
                    (cx - p.radius, cy - p.radius),
                    (cx + p.radius, cy + p.radius),
                ]);
                let frame = Frame::new(bounds, true);
                let blue = Rgb([31, 119, 180]);
                let steps = 720;
                for k in 0..steps {
                    let a0 = std::f64::consts::TAU * k as f64 / steps as f64;
                    let a1 = std::f64::consts::TAU * (k + 1) as f64 / steps as f64;
                    let p0 = (cx + p.radius * a0.cos(), cy + p.radius * a0.sin());
                    let p1 = (cx + p.radius * a1.cos(), cy + p.radius * a1.sin());
                    line(&mut img, frame.px(p0), frame.px(p1), blue);
                }
                for &m in &p.mentions {
                    dot(&mut img, frame.px(m), Rgb([214, 39, 40]));
                }
                let (px, py) = frame.px(p.centroid);
                line(&mut img, (px - 5.0, py - 5.0), (px + 5.0, py + 5.0), blue);
                line(&mut img, (px - 5.0, py + 5.0), (px + 5.0, py - 5.0), blue);
            }
        }
        img
    }

    /// Writes SVG or PNG depending on the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("svg") => std::fs::write(path, self.to_svg()).map_err(|e| Error::io(path, e)),
            Some("png") => self
                .to_png()
                .save(path)
                .map_err(|e| Error::Plot(format!("{}: {e}", path.display()))),
            _ => Err(Error::Plot(format!(
                "{}: output must end in .svg or .png",
                path.display()
            ))),
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn dot(img: &mut RgbImage, (x, y): (f64, f64), c: Rgb<u8>) {
    let (x, y) = (x.round() as i64, y.round() as i64);
    for dx in -2..=2 {
        for dy in -2..=2 {
            if dx * dx + dy * dy <= 5 {
                put(img, x + dx, y + dy, c);
            }
        }
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Series labels and y values embedded in an SVG produced by
/// [`Figure::to_svg`] for a line plot.
pub fn read_svg_series(svg: &str) -> Vec<(String, Vec<f64>)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = line.find(&key)? + key.len();
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .filter_map(|l| {
            let label = attr(l, "data-label")?;
            let ys = attr(l, "data-y")?
                .split_whitespace()
                .map(|v| v.parse().ok())
                .collect::<Option<Vec<f64>>>()?;
            Some((label, ys))
        })
        .collect()
}
