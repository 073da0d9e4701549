//! Text formats for macro problems, optimization histories and property fields.
//!
//! Problem files are line oriented: `key value...`, with `#` comments.
//!
//! ```text
//! nx 10
//! ny 4
//! mode database          # or: family
//! curve graded           # family mode only
//! fix 0 x 0.0            # node, axis, prescribed value
//! target 53 y 0.015      # node, axis, target value
//! load 54 y -0.1         # node, axis, nodal force
//! ```

use super::{Axis, IterRecord, MacroError, MacroProblem, PropertyField};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

/// A problem plus the design mode it asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub problem: MacroProblem,
    /// `"database"` or `"family"`.
    pub mode: String,
    /// Curve identifier for family mode.
    pub curve: Option<String>,
}

fn parse_axis(s: &str) -> Option<Axis> {
    match s {
        "x" | "X" => Some(Axis::X),
        "y" | "Y" => Some(Axis::Y),
        _ => None,
    }
}

fn axis_name(d: usize) -> &'static str {
    if d % 2 == 0 {
        "x"
    } else {
        "y"
    }
}

/// Parses a problem file body; errors name the offending line.
pub fn read_problem(text: &str) -> Result<ProblemFile, MacroError> {
    let err = |line: usize, msg: &str| MacroError::InvalidProblem(format!("line {line}: {msg}"));
    let (mut nx, mut ny) = (None, None);
    let mut mode = "database".to_string();
    let mut curve = None;
    let mut entries: Vec<(usize, String, usize, Axis, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts[0] {
            "nx" | "ny" => {
                let v: usize = parts
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .filter(|&v| v > 0)
                    .ok_or_else(|| err(line_no, "expected a positive integer"))?;
                if parts.len() != 2 {
                    return Err(err(line_no, "trailing fields"));
                }
                if parts[0] == "nx" {
                    nx = Some(v);
                } else {
                    ny = Some(v);
                }
            }
            "mode" => match parts.get(1).copied() {
                Some(m @ ("database" | "family")) if parts.len() == 2 => mode = m.to_string(),
                _ => return Err(err(line_no, "mode must be `database` or `family`")),
            },
            "curve" => match parts.get(1) {
                Some(c) if parts.len() == 2 => curve = Some(c.to_string()),
                _ => return Err(err(line_no, "expected a curve identifier")),
            },
            kind @ ("fix" | "target" | "load") => {
                if parts.len() != 4 {
                    return Err(err(line_no, "expected `<node> <x|y> <value>`"));
                }
                let node: usize = parts[1].parse().map_err(|_| err(line_no, "bad node id"))?;
                let axis = parse_axis(parts[2]).ok_or_else(|| err(line_no, "axis must be x or y"))?;
                let value: f64 = parts[3]
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| err(line_no, "bad value"))?;
                entries.push((line_no, kind.to_string(), node, axis, value));
            }
            other => return Err(err(line_no, &format!("unknown key `{other}`"))),
        }
    }
    let nx = nx.ok_or_else(|| MacroError::InvalidProblem("missing nx".into()))?;
    let ny = ny.ok_or_else(|| MacroError::InvalidProblem("missing ny".into()))?;
    let mut p = MacroProblem::new(nx, ny);
    for (line_no, kind, node, axis, value) in entries {
        if node >= p.n_nodes() {
            return Err(err(line_no, &format!("node {node} outside the {nx}x{ny} mesh")));
        }
        match kind.as_str() {
            "fix" => {
                let d = p.dof(node, axis);
                if p.dirichlet.iter().any(|(k, _)| *k == d) {
                    return Err(err(line_no, "DOF fixed twice"));
                }
                p.prescribe(node, axis, value);
            }
            "target" => p.set_target(node, axis, value),
            _ => p.add_load(node, axis, value),
        }
    }
    p.validate()?;
    if mode == "family" && curve.is_none() {
        curve = Some("graded".into());
    }
    Ok(ProblemFile { problem: p, mode, curve })
}

/// Serializes a problem file; `read_problem` inverts it exactly.
pub fn write_problem(pf: &ProblemFile) -> String {
    let p = &pf.problem;
    let mut s = String::new();
    let _ = writeln!(s, "nx {}\nny {}\nmode {}", p.nx, p.ny, pf.mode);
    if let Some(c) = &pf.curve {
        let _ = writeln!(s, "curve {c}");
    }
    for &(d, v) in &p.dirichlet {
        let _ = writeln!(s, "fix {} {} {v}", d / 2, axis_name(d));
    }
    for d in 0..p.n_dofs() {
        if p.gamma[d] == 1.0 {
            let _ = writeln!(s, "target {} {} {}", d / 2, axis_name(d), p.target[d]);
        }
    }
    for d in 0..p.n_dofs() {
        if p.load[d] != 0.0 {
            let _ = writeln!(s, "load {} {} {}", d / 2, axis_name(d), p.load[d]);
        }
    }
    s
}

pub fn write_history_csv(path: &Path, history: &[IterRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,F,RRMSE,g,max_move")?;
    for h in history {
        writeln!(f, "{},{},{},{},{}", h.iter, h.objective, h.rrmse, h.constraint, h.max_move)?;
    }
    f.flush()
}

pub fn write_field_csv(path: &Path, field: &PropertyField) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "e,C11,C12,C22,C33")?;
    for (e, c) in field.values.iter().enumerate() {
        writeln!(f, "{e},{},{},{},{}", c.c11, c.c12, c.c22, c.c33)?;
    }
    f.flush()
}

/// Reads `e,C11,C12,C22,C33` rows back into an unbounded field.
pub fn read_field_csv(text: &str) -> Result<PropertyField, MacroError> {
    let err = |line: usize, msg: &str| MacroError::InvalidProblem(format!("field line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "e,C11,C12,C22,C33" => {}
        _ => return Err(err(1, "expected header e,C11,C12,C22,C33")),
    }
    let mut values = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(err(i + 1, "expected 5 columns"));
        }
        if parts[0].parse::<usize>().ok() != Some(values.len()) {
            return Err(err(i + 1, "element indices must run 0, 1, 2, ..."));
        }
        let mut c = [0.0; 4];
        for (k, v) in parts[1..].iter().enumerate() {
            c[k] = v.parse().map_err(|_| err(i + 1, "malformed number"))?;
        }
        values.push(crate::homogenization::StiffnessComponents::from_array(c));
    }
    Ok(PropertyField::unbounded(values))
}

/// Four side-by-side heatmaps of the element components; row `ny−1` at the top.
pub fn write_field_svg(path: &Path, field: &PropertyField, nx: usize, ny: usize) -> std::io::Result<()> {
    let cell = 16.0;
    let gap = 24.0;
    let panel_w = nx as f64 * cell;
    let width = 4.0 * panel_w + 5.0 * gap;
    let height = ny as f64 * cell + 2.0 * gap;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    for (k, name) in crate::homogenization::StiffnessComponents::NAMES.iter().enumerate() {
        let vals: Vec<f64> = field.values.iter().map(|c| c.to_array()[k]).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x0 = gap + k as f64 * (panel_w + gap);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}">{name} [{lo:.3}, {hi:.3}]</text>"#, gap - 6.0);
        for (e, v) in vals.iter().enumerate() {
            let (i, j) = (e % nx, e / nx);
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
                x0 + i as f64 * cell,
                gap + (ny - 1 - j) as f64 * cell,
                heat_color(t)
            );
        }
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}

/// Blue-to-red ramp.
pub(crate) fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.8).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macroopt::arch_case;

    #[test]
    fn field_csv_round_trips() {
        let values = vec![
            crate::homogenization::StiffnessComponents::from_array([0.1, 0.02, 0.3, 1.0 / 3.0]),
            crate::homogenization::StiffnessComponents::from_array([1e-7, 0.0, 0.5, 0.25]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        write_field_csv(&path, &PropertyField::unbounded(values.clone())).unwrap();
        let back = read_field_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.values, values);
        assert!(read_field_csv("e,C11\n").is_err());
        assert!(read_field_csv("e,C11,C12,C22,C33\n1,0,0,0,0\n").is_err());
    }

    #[test]
    fn problem_files_round_trip() {
        let p = arch_case(5, 2, 0.1, 0.03);
        let pf = ProblemFile { problem: p, mode: "family".into(), curve: Some("graded".into()) };
        let text = write_problem(&pf);
        assert_eq!(read_problem(&text).unwrap(), pf);
    }

    #[test]
    fn malformed_lines_are_reported_with_their_number() {
        let e = read_problem("nx 2\nny 2\nfix 0 z 0.0\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = read_problem("nx 2\nny 2\nfix 99 x 0.0\n").unwrap_err();
        assert!(e.to_string().contains("line 3"));
        let e = read_problem("nx 2\nbogus 1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"));
        assert!(read_problem("ny 2\n").is_err());
    }

    #[test]
    fn loads_accumulate_and_comments_are_ignored() {
        let pf = read_problem("# header\nnx 1\nny 1 # trailing\nload 3 y -0.5\nload 3 y -0.25\n").unwrap();
        assert_eq!(pf.problem.load[7], -0.75);
        assert_eq!(pf.mode, "database");
    }
}
