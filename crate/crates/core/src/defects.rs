//! Defect localization from the largest-eigenvalue field.
//!
//! Defect cores are where `Q` melts, so the largest eigenvalue drops to a
//! local minimum there. Candidates are vertices that are strict local minima
//! of `lambda_max` below a threshold; positions are refined by a quadratic
//! least-squares fit of `lambda_max^2` over the vertex star.

use serde::{Deserialize, Serialize};

use crate::mesh::{Mesh, Point};
use crate::qtensor::{Basis, Dim};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub position: Point,
    pub vertex: usize,
    pub lambda_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub threshold: f64,
    pub defects: Vec<Defect>,
    /// Per-slice minima ordered by height (three dimensions only).
    pub polyline: Vec<Point>,
}

impl DefectReport {
    pub fn is_empty(&self) -> bool {
        self.defects.is_empty()
    }

    /// Defect closest to `p`, with its distance.
    pub fn nearest(&self, p: &Point) -> Option<(&Defect, f64)> {
        self.defects
            .iter()
            .map(|d| (d, dist(&d.position, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn lambda_max_field(basis: &Basis, field: &[f64]) -> Vec<f64> {
    field
        .chunks(basis.ncoef())
        .map(|c| basis.eig_max_coeffs(c).0)
        .collect()
}

/// Threshold on `lambda_max` at which the local order parameter
/// `s = d / (d - 1) * lambda_max` falls to half of `s_star`.
pub fn default_threshold(dim: Dim, s_star: f64) -> f64 {
    let d = dim.get() as f64;
    0.5 * s_star * (d - 1.0) / d
}

/// Locates defects where the local order parameter drops below `s_star / 2`.
pub fn locate_defects(mesh: &Mesh, basis: &Basis, field: &[f64], s_star: f64) -> DefectReport {
    locate_defects_below(mesh, basis, field, default_threshold(mesh.dim(), s_star))
}

pub fn locate_defects_below(
    mesh: &Mesh,
    basis: &Basis,
    field: &[f64],
    threshold: f64,
) -> DefectReport {
    let lam = lambda_max_field(basis, field);
    match mesh.dim() {
        Dim::Two => {
            let defects = (0..mesh.n_vertices())
                .filter_map(|v| {
                    let star = mesh.neighbors(v);
                    is_candidate(&lam, v, star, threshold).then(|| Defect {
                        position: refine(mesh, &lam, v, star),
                        vertex: v,
                        lambda_max: lam[v],
                    })
                })
                .collect();
            DefectReport {
                threshold,
                defects,
                polyline: Vec::new(),
            }
        }
        Dim::Three => {
            let z = |v: usize| mesh.vertices()[v][2];
            let mut defects = Vec::new();
            let mut polyline = Vec::new();
            let m = mesh.n_per_side();
            for layer in 0..=m {
                let height = layer as f64 / m as f64;
                let mut best: Option<Defect> = None;
                for v in (0..mesh.n_vertices()).filter(|&v| (z(v) - height).abs() < 1e-12) {
                    let star: Vec<usize> = mesh
                        .neighbors(v)
                        .iter()
                        .copied()
                        .filter(|&u| (z(u) - height).abs() < 1e-12)
                        .collect();
                    if !is_candidate(&lam, v, &star, threshold) {
                        continue;
                    }
                    let d = Defect {
                        position: refine(mesh, &lam, v, &star),
                        vertex: v,
                        lambda_max: lam[v],
                    };
                    if best.as_ref().is_none_or(|b| d.lambda_max < b.lambda_max) {
                        best = Some(d.clone());
                    }
                    defects.push(d);
                }
                if let Some(b) = best {
                    polyline.push(b.position);
                }
            }
            DefectReport {
                threshold,
                defects,
                polyline,
            }
        }
    }
}

fn is_candidate(lam: &[f64], v: usize, star: &[usize], threshold: f64) -> bool {
    lam[v] < threshold && !star.is_empty() && star.iter().all(|&u| lam[v] < lam[u])
}

/// Minimizer of a quadratic fit of `lambda_max^2` in the plane of the star,
/// kept only if the fit is convex and the minimizer stays inside the star.
fn refine(mesh: &Mesh, lam: &[f64], v: usize, star: &[usize]) -> Point {
    let p0 = mesh.vertices()[v];
    let pts: Vec<usize> = std::iter::once(v).chain(star.iter().copied()).collect();
    if pts.len() < 6 {
        return p0;
    }
    let radius = star
        .iter()
        .map(|&u| dist(&mesh.vertices()[u], &p0))
        .fold(0.0, f64::max);
    // Normal equations for f = c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2.
    let mut ata = [[0.0; 6]; 6];
    let mut atb = [0.0; 6];
    for &u in &pts {
        let p = mesh.vertices()[u];
        let (x, y) = ((p[0] - p0[0]) / radius, (p[1] - p0[1]) / radius);
        let row = [1.0, x, y, x * x, x * y, y * y];
        let f = lam[u] * lam[u];
        for i in 0..6 {
            atb[i] += row[i] * f;
            for j in 0..6 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let Some(c) = solve6(ata, atb) else {
        return p0;
    };
    let (a, b, e) = (2.0 * c[3], c[4], 2.0 * c[5]);
    let det = a * e - b * b;
    if !(a > 0.0 && det > 0.0) {
        return p0;
    }
    let x = (-c[1] * e + b * c[2]) / det;
    let y = (-a * c[2] + b * c[1]) / det;
    if x.hypot(y) > 1.0 {
        return p0;
    }
    [p0[0] + radius * x, p0[1] + radius * y, p0[2]]
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let piv = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..6 {
            let f = a[r][col] / a[col][col];
            for k in col..6 {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for r in (0..6).rev() {
        let s: f64 = (r + 1..6).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}
