//! Labeling tables and stitched-structure images.

use super::AssemblyGraph;
use super::Labeling;
use crate::microstructure::Microstructure;
use std::fmt::Write as _;
use std::path::Path;

/// `row,col,id` per macro element, rows counted from the bottom.
pub fn labeling_csv(graph: &AssemblyGraph, labeling: &Labeling) -> String {
    let mut s = String::from("row,col,id\n");
    for (e, id) in graph.selected_ids(labeling).into_iter().enumerate() {
        let _ = writeln!(s, "{},{},{id}", e / graph.nx, e % graph.nx);
    }
    s
}

/// Reads a labeling table into ids in element order (`row·nx + col`).
pub fn read_labeling_csv(text: &str, nx: usize, ny: usize) -> Result<Vec<u64>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "row,col,id" => {}
        _ => return Err("labeling line 1: expected header row,col,id".into()),
    }
    let mut ids = vec![None; nx * ny];
    for (i, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let v: Vec<u64> = raw.trim().split(',').map(|x| x.parse::<u64>()).collect::<Result<_, _>>().map_err(|_| format!("labeling line {}: malformed entry", i + 1))?;
        let [row, col, id] = v[..] else { return Err(format!("labeling line {}: expected 3 columns", i + 1)) };
        let (row, col) = (row as usize, col as usize);
        if row >= ny || col >= nx {
            return Err(format!("labeling line {}: element ({row}, {col}) outside the {ny}x{nx} mesh", i + 1));
        }
        ids[row * nx + col] = Some(id);
    }
    ids.into_iter().enumerate().map(|(e, id)| id.ok_or_else(|| format!("labeling has no entry for element {e}"))).collect()
}

/// Binary greymap (P5) with maxval 1: solid pixels are 0 (black), void 1 (white).
pub fn stitched_pgm(m: &Microstructure) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n1\n", m.width(), m.height()).into_bytes();
    out.extend(m.cells().iter().map(|&c| 1 - c));
    out
}

pub fn write_pgm(path: &Path, m: &Microstructure) -> std::io::Result<()> {
    std::fs::write(path, stitched_pgm(m))
}

/// Run-length encoded rows as SVG rectangles.
pub fn stitched_svg(m: &Microstructure, pixel: f64) -> String {
    let (w, h) = (m.width() as f64 * pixel, m.height() as f64 * pixel);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let mut path = String::new();
    for r in 0..m.height() {
        let mut c = 0;
        while c < m.width() {
            if m.get(r, c) {
                let start = c;
                while c < m.width() && m.get(r, c) {
                    c += 1;
                }
                let _ = write!(path, "M{} {}h{}v{pixel}h-{}z", start as f64 * pixel, r as f64 * pixel, (c - start) as f64 * pixel, (c - start) as f64 * pixel);
            } else {
                c += 1;
            }
        }
    }
    let _ = writeln!(s, r#"<path d="{path}" fill="black"/>"#);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeling_table_reads_back() {
        let ids = read_labeling_csv("row,col,id\n0,0,5\n0,1,7\n1,0,9\n1,1,2\n", 2, 2).unwrap();
        assert_eq!(ids, vec![5, 7, 9, 2]);
        assert!(read_labeling_csv("row,col,id\n0,0,5\n", 2, 1).is_err());
        assert!(read_labeling_csv("row,col,id\n3,0,5\n", 1, 1).is_err());
    }

    #[test]
    fn pgm_maps_solid_to_black() {
        let m = Microstructure::from_fn(2, 3, |r, c| r == 0 && c != 1);
        let b = stitched_pgm(&m);
        let header = b"P5\n3 2\n1\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[0, 1, 0, 1, 1, 1]);
    }

    #[test]
    fn svg_runs_cover_solid_pixels() {
        let m = Microstructure::from_fn(2, 4, |r, c| r == 1 || c == 0);
        let s = stitched_svg(&m, 1.0);
        assert_eq!(s.matches('M').count(), 2);
    }
}
