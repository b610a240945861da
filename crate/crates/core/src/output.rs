//! File output: legacy VTK, CSV history and JSON, written atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::IterationRecord;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::qtensor::Basis;

/// Writes `bytes` to a temporary sibling of `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn history_csv(history: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in history {
        w.serialize(rec).map_err(|e| Error::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

pub fn write_history(path: &Path, history: &[IterationRecord]) -> Result<()> {
    write_atomic(path, history_csv(history)?.as_bytes())
}

/// Per-entity diagnostics: largest eigenvalue, its eigenvector, biaxiality.
fn diagnostics(basis: &Basis, field: &[f64]) -> (Vec<f64>, Vec<[f64; 3]>, Vec<f64>) {
    let n = basis.ncoef();
    let mut lam = Vec::new();
    let mut dir = Vec::new();
    let mut bi = Vec::new();
    for c in field.chunks(n) {
        let (l, v) = basis.eig_max_coeffs(c);
        lam.push(l);
        dir.push(v);
        bi.push(basis.biaxiality_coeffs(c));
    }
    (lam, dir, bi)
}

fn push_attributes(out: &mut String, basis: &Basis, field: &[f64]) {
    let n = basis.ncoef();
    let (lam, dir, bi) = diagnostics(basis, field);
    let count = lam.len();
    out.push_str("SCALARS lambda_max double 1\nLOOKUP_TABLE default\n");
    for l in &lam {
        let _ = writeln!(out, "{l:.12e}");
    }
    out.push_str("VECTORS director double\n");
    for v in &dir {
        let _ = writeln!(out, "{:.12e} {:.12e} {:.12e}", v[0], v[1], v[2]);
    }
    let _ = writeln!(out, "FIELD attributes 2");
    let _ = writeln!(out, "q_coefficients {n} {count} double");
    for c in field.chunks(n) {
        let row: Vec<String> = c.iter().map(|x| format!("{x:.12e}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let _ = writeln!(out, "biaxiality 1 {count} double");
    for b in &bi {
        let _ = writeln!(out, "{b:.12e}");
    }
}

fn push_points(out: &mut String, mesh: &Mesh) {
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(out, "{:.12e} {:.12e} {:.12e}", p[0], p[1], p[2]);
    }
}

/// Legacy ASCII unstructured grid with a P1 tensor field as point data.
pub fn vtk_state(mesh: &Mesh, basis: &Basis, field: &[f64], title: &str) -> String {
    let d = mesh.dim().get();
    let mut out =
        format!("# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    push_points(&mut out, mesh);
    let nc = mesh.n_cells();
    let _ = writeln!(out, "CELLS {nc} {}", nc * (d + 2));
    for ids in mesh.cells() {
        let s: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{} {}", d + 1, s.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {nc}");
    let ty = if d == 2 { 5 } else { 10 };
    for _ in 0..nc {
        let _ = writeln!(out, "{ty}");
    }
    let _ = writeln!(out, "POINT_DATA {}", mesh.n_vertices());
    push_attributes(&mut out, basis, field);
    out
}

/// Boundary faces with a P0 tensor field as cell data.
pub fn vtk_boundary(mesh: &Mesh, basis: &Basis, field: &[f64], title: &str) -> String {
    let d = mesh.dim().get();
    let mut out =
        format!("# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    push_points(&mut out, mesh);
    let nf = mesh.n_boundary_faces();
    let _ = writeln!(out, "CELLS {nf} {}", nf * (d + 1));
    for ids in mesh.boundary_faces() {
        let s: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{d} {}", s.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {nf}");
    let ty = if d == 2 { 3 } else { 5 };
    for _ in 0..nf {
        let _ = writeln!(out, "{ty}");
    }
    let _ = writeln!(out, "CELL_DATA {nf}");
    push_attributes(&mut out, basis, field);
    out
}

pub fn write_vtk_state(
    path: &Path,
    mesh: &Mesh,
    basis: &Basis,
    field: &[f64],
    title: &str,
) -> Result<()> {
    write_atomic(path, vtk_state(mesh, basis, field, title).as_bytes())
}

pub fn write_vtk_boundary(
    path: &Path,
    mesh: &Mesh,
    basis: &Basis,
    field: &[f64],
    title: &str,
) -> Result<()> {
    write_atomic(path, vtk_boundary(mesh, basis, field, title).as_bytes())
}
