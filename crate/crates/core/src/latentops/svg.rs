//! SVG exports: principal-component scatter plots and strips of cells.

use crate::microstructure::Microstructure;
use std::fmt::Write as _;
use std::path::Path;

fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Scatter of 2-D points coloured by `values`; `highlight` indices are drawn larger and outlined.
pub fn pca_scatter_svg(points: &[[f64; 2]], values: &[f64], highlight: &[usize]) -> String {
    let size = 480.0;
    let pad = 24.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let vlo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let vhi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let map = |v: f64, k: usize| {
        let span = (hi[k] - lo[k]).max(1e-12);
        pad + (v - lo[k]) / span * (size - 2.0 * pad)
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">"#);
    let _ = writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    for (i, p) in points.iter().enumerate() {
        let t = if vhi > vlo { (values.get(i).copied().unwrap_or(vlo) - vlo) / (vhi - vlo) } else { 0.5 };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#,
            map(p[0], 0),
            size - map(p[1], 1),
            ramp(t)
        );
    }
    for &i in highlight {
        if let Some(p) = points.get(i) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="black" stroke-width="1.5"/>"#,
                map(p[0], 0),
                size - map(p[1], 1)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Cells side by side, solid pixels in black.
pub fn strip_svg(cells: &[Microstructure], pixel: f64) -> String {
    let gap = 4.0 * pixel;
    let h = cells.iter().map(|c| c.height()).max().unwrap_or(0) as f64 * pixel;
    let w: f64 = cells.iter().map(|c| c.width() as f64 * pixel + gap).sum::<f64>() + gap;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}">"#, h + 2.0 * gap);
    let _ = writeln!(s, r#"<rect width="{w}" height="{}" fill="white"/>"#, h + 2.0 * gap);
    let mut x0 = gap;
    for c in cells {
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{gap}" width="{}" height="{}" fill="none" stroke="gray" stroke-width="0.5"/>"#,
            c.width() as f64 * pixel,
            c.height() as f64 * pixel
        );
        let mut path = String::new();
        for r in 0..c.height() {
            for col in 0..c.width() {
                if c.get(r, col) {
                    let _ = write!(path, "M{} {}h{pixel}v{pixel}h-{pixel}z", x0 + col as f64 * pixel, gap + r as f64 * pixel);
                }
            }
        }
        let _ = writeln!(s, r#"<path d="{path}" fill="black"/>"#);
        x0 += c.width() as f64 * pixel + gap;
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, svg: &str) -> std::io::Result<()> {
    std::fs::write(path, svg)
}
