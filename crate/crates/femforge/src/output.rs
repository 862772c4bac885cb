//! Output writers: legacy ASCII VTK unstructured-grid snapshots and CSV time
//! series, plus a minimal VTK reader used to round-trip in tests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{FemError, Result};
use crate::mesh::Mesh;

/// A named point or cell array. `component_count` is 1 for scalars and 3 for
/// vectors (z padded with 0 when the source is 2D).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldArray {
    pub name: String,
    pub component_count: usize,
    pub values: Vec<f64>,
}

impl FieldArray {
    pub fn scalar(name: &str, values: Vec<f64>) -> Self {
        FieldArray {
            name: name.to_string(),
            component_count: 1,
            values,
        }
    }

    /// 2D vectors packed (x0, y0, x1, y1, ...); padded to 3 components on
    /// write.
    pub fn vector2(name: &str, values: Vec<f64>) -> Self {
        FieldArray {
            name: name.to_string(),
            component_count: 2,
            values,
        }
    }

    fn n_tuples(&self) -> usize {
        self.values.len() / self.component_count
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation; deterministic across runs
    format!("{v}")
}

/// Writes a legacy ASCII VTK unstructured grid with quad (type 9) cells.
pub fn write_vtk(
    path: &Path,
    mesh: &Mesh,
    point_data: &[FieldArray],
    cell_data: &[FieldArray],
) -> Result<()> {
    for f in point_data {
        if f.n_tuples() != mesh.n_nodes() {
            return Err(FemError::Config(format!(
                "point array {:?} has {} tuples for {} nodes",
                f.name,
                f.n_tuples(),
                mesh.n_nodes()
            )));
        }
    }
    for f in cell_data {
        if f.n_tuples() != mesh.n_elements() {
            return Err(FemError::Config(format!(
                "cell array {:?} has {} tuples for {} cells",
                f.name,
                f.n_tuples(),
                mesh.n_elements()
            )));
        }
    }
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("femforge snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.n_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(out, "{} {} 0", fmt_f64(p[0]), fmt_f64(p[1]));
    }
    let ne = mesh.n_elements();
    let _ = writeln!(out, "CELLS {} {}", ne, 5 * ne);
    for conn in &mesh.elements {
        let _ = writeln!(out, "4 {} {} {} {}", conn[0], conn[1], conn[2], conn[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {ne}");
    for _ in 0..ne {
        out.push_str("9\n");
    }
    if !point_data.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.n_nodes());
        write_arrays(&mut out, point_data);
    }
    if !cell_data.is_empty() {
        let _ = writeln!(out, "CELL_DATA {ne}");
        write_arrays(&mut out, cell_data);
    }
    fs::write(path, out).map_err(|source| FemError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_arrays(out: &mut String, arrays: &[FieldArray]) {
    for f in arrays {
        match f.component_count {
            1 => {
                let _ = writeln!(out, "SCALARS {} double 1", f.name);
                out.push_str("LOOKUP_TABLE default\n");
                for v in &f.values {
                    let _ = writeln!(out, "{}", fmt_f64(*v));
                }
            }
            2 => {
                let _ = writeln!(out, "VECTORS {} double", f.name);
                for t in f.values.chunks(2) {
                    let _ = writeln!(out, "{} {} 0", fmt_f64(t[0]), fmt_f64(t[1]));
                }
            }
            3 => {
                let _ = writeln!(out, "VECTORS {} double", f.name);
                for t in f.values.chunks(3) {
                    let _ = writeln!(
                        out,
                        "{} {} {}",
                        fmt_f64(t[0]),
                        fmt_f64(t[1]),
                        fmt_f64(t[2])
                    );
                }
            }
            _ => unreachable!("unsupported component count"),
        }
    }
}

/// Everything the minimal reader recovers from a snapshot.
#[derive(Debug, Clone, Default)]
pub struct VtkData {
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub point_data: Vec<FieldArray>,
    pub cell_data: Vec<FieldArray>,
}

/// Minimal legacy-VTK reader for round-trip checks; handles only what
/// [`write_vtk`] emits.
pub fn read_vtk(path: &Path) -> Result<VtkData> {
    let text = fs::read_to_string(path).map_err(|source| FemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parse_err = |detail: &str| FemError::Parse {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let mut data = VtkData::default();
    let mut lines = text.lines().peekable();
    let mut section: Option<(bool, usize)> = None; // (is_point_data, count)
    while let Some(line) = lines.next() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("POINTS") => {
                let n: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err("bad POINTS header"))?;
                for _ in 0..n {
                    let row = lines.next().ok_or_else(|| parse_err("truncated POINTS"))?;
                    let v: Vec<f64> = row
                        .split_whitespace()
                        .map(|t| t.parse().unwrap_or(f64::NAN))
                        .collect();
                    if v.len() != 3 {
                        return Err(parse_err("point row is not 3 components"));
                    }
                    data.points.push([v[0], v[1], v[2]]);
                }
            }
            Some("CELLS") => {
                let n: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err("bad CELLS header"))?;
                for _ in 0..n {
                    let row = lines.next().ok_or_else(|| parse_err("truncated CELLS"))?;
                    let ids: Vec<usize> = row
                        .split_whitespace()
                        .map(|t| t.parse().unwrap_or(usize::MAX))
                        .collect();
                    let count = *ids.first().ok_or_else(|| parse_err("empty cell row"))?;
                    if ids.len() != count + 1 {
                        return Err(parse_err("cell row length mismatch"));
                    }
                    data.cells.push(ids[1..].to_vec());
                }
            }
            Some("POINT_DATA") => {
                let n = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err("bad POINT_DATA header"))?;
                section = Some((true, n));
            }
            Some("CELL_DATA") => {
                let n = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err("bad CELL_DATA header"))?;
                section = Some((false, n));
            }
            Some("SCALARS") => {
                let (is_point, n) = section.ok_or_else(|| parse_err("SCALARS outside section"))?;
                let name = tok.next().ok_or_else(|| parse_err("unnamed SCALARS"))?;
                lines.next(); // LOOKUP_TABLE
                let mut values = Vec::with_capacity(n);
                for _ in 0..n {
                    let row = lines.next().ok_or_else(|| parse_err("truncated SCALARS"))?;
                    values.push(
                        row.trim()
                            .parse()
                            .map_err(|_| parse_err("bad scalar value"))?,
                    );
                }
                let arr = FieldArray::scalar(name, values);
                if is_point {
                    data.point_data.push(arr);
                } else {
                    data.cell_data.push(arr);
                }
            }
            Some("VECTORS") => {
                let (is_point, n) = section.ok_or_else(|| parse_err("VECTORS outside section"))?;
                let name = tok.next().ok_or_else(|| parse_err("unnamed VECTORS"))?;
                let mut values = Vec::with_capacity(3 * n);
                for _ in 0..n {
                    let row = lines.next().ok_or_else(|| parse_err("truncated VECTORS"))?;
                    let v: Vec<f64> = row
                        .split_whitespace()
                        .map(|t| t.parse().unwrap_or(f64::NAN))
                        .collect();
                    if v.len() != 3 {
                        return Err(parse_err("vector row is not 3 components"));
                    }
                    values.extend(v);
                }
                let arr = FieldArray {
                    name: name.to_string(),
                    component_count: 3,
                    values,
                };
                if is_point {
                    data.point_data.push(arr);
                } else {
                    data.cell_data.push(arr);
                }
            }
            _ => {}
        }
    }
    Ok(data)
}

/// Writes a CSV with a header row and one row per step. Values are formatted
/// with the shortest round-trip representation, so identical runs produce
/// bit-identical files.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(FemError::Config(format!(
                "csv row with {} values under {} columns",
                row.len(),
                header.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| FemError::Io {
        path: path.display().to_string(),
        source,
    })
}
