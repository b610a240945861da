//! Structured simplicial meshes of the unit square and unit cube.
//!
//! Squares are split into two triangles along the `(0,0)-(1,1)` diagonal and
//! cubes into six tetrahedra by the Kuhn subdivision along the main
//! diagonal. Both patterns are translation invariant, so the meshes are
//! conforming and every cell is congruent to one of a fixed set of shapes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::qtensor::Dim;

pub type Point = [f64; 3];

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: Dim,
    n_per_side: usize,
    vertices: Vec<Point>,
    /// `d + 1` vertex indices per cell, positively oriented.
    cells: Vec<[usize; 4]>,
    /// `d` vertex indices per boundary facet, ordered so the facet normal
    /// points out of the domain.
    boundary_faces: Vec<[usize; 3]>,
    cell_volumes: Vec<f64>,
    face_areas: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    h: f64,
}

/// Degree-of-freedom counts for the P1 state and P0 control spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub n_vertices: usize,
    pub n_cells: usize,
    pub n_boundary_faces: usize,
    pub ncoef: usize,
}

impl DofMap {
    pub fn state_len(&self) -> usize {
        self.n_vertices * self.ncoef
    }

    pub fn domain_control_len(&self) -> usize {
        self.n_cells * self.ncoef
    }

    pub fn boundary_control_len(&self) -> usize {
        self.n_boundary_faces * self.ncoef
    }

    /// Flat index of coefficient `i` at entity `e` (entity-major layout).
    pub fn index(&self, entity: usize, i: usize) -> usize {
        entity * self.ncoef + i
    }
}

impl Mesh {
    pub fn unit(dim: Dim, n_per_side: usize) -> Result<Mesh> {
        if n_per_side < 2 {
            return Err(Error::Config(format!(
                "mesh needs at least 2 subdivisions per side, got {n_per_side}"
            )));
        }
        let n = n_per_side;
        let np = n + 1;
        let hgrid = 1.0 / n as f64;
        let mut vertices = Vec::new();
        let mut cells = Vec::new();
        match dim {
            Dim::Two => {
                for j in 0..np {
                    for i in 0..np {
                        vertices.push([i as f64 * hgrid, j as f64 * hgrid, 0.0]);
                    }
                }
                let vid = |i: usize, j: usize| i + np * j;
                for j in 0..n {
                    for i in 0..n {
                        let (v00, v10, v11, v01) =
                            (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                        cells.push([v00, v10, v11, usize::MAX]);
                        cells.push([v00, v11, v01, usize::MAX]);
                    }
                }
            }
            Dim::Three => {
                for k in 0..np {
                    for j in 0..np {
                        for i in 0..np {
                            vertices.push([i as f64 * hgrid, j as f64 * hgrid, k as f64 * hgrid]);
                        }
                    }
                }
                let vid = |i: usize, j: usize, k: usize| i + np * (j + np * k);
                const PERMS: [[usize; 3]; 6] = [
                    [0, 1, 2],
                    [0, 2, 1],
                    [1, 0, 2],
                    [1, 2, 0],
                    [2, 0, 1],
                    [2, 1, 0],
                ];
                for k in 0..n {
                    for j in 0..n {
                        for i in 0..n {
                            for perm in PERMS {
                                let mut idx = [i, j, k];
                                let mut tet = [vid(i, j, k), 0, 0, 0];
                                for (step, axis) in perm.iter().enumerate() {
                                    idx[*axis] += 1;
                                    tet[step + 1] = vid(idx[0], idx[1], idx[2]);
                                }
                                cells.push(tet);
                            }
                        }
                    }
                }
            }
        }
        let d = dim.get();
        let mut cell_volumes = Vec::with_capacity(cells.len());
        for cell in cells.iter_mut() {
            let mut vol = signed_volume(&vertices, &cell[..=d]);
            if vol < 0.0 {
                cell.swap(d - 1, d);
                vol = -vol;
            }
            cell_volumes.push(vol);
        }

        // Facets seen once are on the boundary.
        let mut facet_count: HashMap<[usize; 3], (usize, usize, usize)> = HashMap::new();
        let mut order = Vec::new();
        for (ci, cell) in cells.iter().enumerate() {
            for opp in 0..=d {
                let mut key = [usize::MAX; 3];
                let mut m = 0;
                for (a, &v) in cell[..=d].iter().enumerate() {
                    if a != opp {
                        key[m] = v;
                        m += 1;
                    }
                }
                key[..d].sort_unstable();
                let entry = facet_count.entry(key).or_insert_with(|| {
                    order.push(key);
                    (0, ci, opp)
                });
                entry.0 += 1;
            }
        }
        let mut boundary_faces = Vec::new();
        let mut face_areas = Vec::new();
        for key in order {
            let (count, ci, opp) = facet_count[&key];
            if count > 2 {
                return Err(Error::Input(
                    "non-conforming mesh: facet shared by more than two cells".into(),
                ));
            }
            if count != 1 {
                continue;
            }
            let mut face = key;
            let inner = vertices[cells[ci][opp]];
            let area = match dim {
                Dim::Two => {
                    let (a, b) = (vertices[face[0]], vertices[face[1]]);
                    let normal = [b[1] - a[1], a[0] - b[0]];
                    if normal[0] * (inner[0] - a[0]) + normal[1] * (inner[1] - a[1]) > 0.0 {
                        face.swap(0, 1);
                    }
                    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
                }
                Dim::Three => {
                    let (a, b, c) = (vertices[face[0]], vertices[face[1]], vertices[face[2]]);
                    let nrm = cross(&sub(&b, &a), &sub(&c, &a));
                    if dot(&nrm, &sub(&inner, &a)) > 0.0 {
                        face.swap(1, 2);
                    }
                    0.5 * dot(&nrm, &nrm).sqrt()
                }
            };
            boundary_faces.push(face);
            face_areas.push(area);
        }

        let mut neighbors = vec![Vec::new(); vertices.len()];
        for cell in &cells {
            for &a in &cell[..=d] {
                for &b in &cell[..=d] {
                    if a != b {
                        neighbors[a].push(b);
                    }
                }
            }
        }
        for nb in neighbors.iter_mut() {
            nb.sort_unstable();
            nb.dedup();
        }

        let h = match dim {
            Dim::Two => 2f64.sqrt() * hgrid,
            Dim::Three => 3f64.sqrt() * hgrid,
        };
        Ok(Mesh {
            dim,
            n_per_side,
            vertices,
            cells,
            boundary_faces,
            cell_volumes,
            face_areas,
            neighbors,
            h,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n_per_side(&self) -> usize {
        self.n_per_side
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.boundary_faces.len()
    }

    /// Vertex indices of cell `c` (`d + 1` entries).
    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..=self.dim.get()]
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        let d = self.dim.get();
        self.cells.iter().map(move |c| &c[..=d])
    }

    /// Vertex indices of boundary face `f` (`d` entries, outward oriented).
    pub fn boundary_face(&self, f: usize) -> &[usize] {
        &self.boundary_faces[f][..self.dim.get()]
    }

    pub fn boundary_faces(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        let d = self.dim.get();
        self.boundary_faces.iter().map(move |f| &f[..d])
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    /// Vertices sharing a cell with `v` (excluding `v`), sorted.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dofs(&self) -> DofMap {
        DofMap {
            n_vertices: self.n_vertices(),
            n_cells: self.n_cells(),
            n_boundary_faces: self.n_boundary_faces(),
            ncoef: self.dim.ncoef(),
        }
    }

    pub fn cell_centroid(&self, c: usize) -> Point {
        centroid(&self.vertices, self.cell(c))
    }

    pub fn face_centroid(&self, f: usize) -> Point {
        centroid(&self.vertices, self.boundary_face(f))
    }

    /// Boundary face to P1 vertex map (the trace of the P1 space on each face).
    pub fn boundary_trace_map(&self) -> Vec<Vec<usize>> {
        self.boundary_faces().map(|f| f.to_vec()).collect()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        let d = self.dim.get();
        self.vertices[v][..d].iter().any(|&x| x == 0.0 || x == 1.0)
    }

    /// Ratio of circumradius to inradius for cell `c`.
    pub fn aspect_ratio(&self, c: usize) -> f64 {
        let ids = self.cell(c);
        let p: Vec<Point> = ids.iter().map(|&i| self.vertices[i]).collect();
        match self.dim {
            Dim::Two => {
                let a = dist(&p[1], &p[2]);
                let b = dist(&p[0], &p[2]);
                let cc = dist(&p[0], &p[1]);
                let area = self.cell_volumes[c];
                let circ = a * b * cc / (4.0 * area);
                let inr = 2.0 * area / (a + b + cc);
                circ / inr
            }
            Dim::Three => {
                let vol = self.cell_volumes[c];
                let mut surface = 0.0;
                for opp in 0..4 {
                    let f: Vec<Point> = (0..4).filter(|&i| i != opp).map(|i| p[i]).collect();
                    let n = cross(&sub(&f[1], &f[0]), &sub(&f[2], &f[0]));
                    surface += 0.5 * dot(&n, &n).sqrt();
                }
                let inr = 3.0 * vol / surface;
                // Circumcenter x solves 2 (p_i - p_0) . x = |p_i|^2 - |p_0|^2.
                let mut a = [[0.0; 3]; 3];
                let mut rhs = [0.0; 3];
                for i in 0..3 {
                    let e = sub(&p[i + 1], &p[0]);
                    a[i] = [2.0 * e[0], 2.0 * e[1], 2.0 * e[2]];
                    rhs[i] = dot(&p[i + 1], &p[i + 1]) - dot(&p[0], &p[0]);
                }
                let x = solve3(&a, &rhs);
                dist(&x, &p[0]) / inr
            }
        }
    }
}

fn signed_volume(vertices: &[Point], cell: &[usize]) -> f64 {
    let p0 = vertices[cell[0]];
    match cell.len() {
        3 => {
            let a = sub(&vertices[cell[1]], &p0);
            let b = sub(&vertices[cell[2]], &p0);
            0.5 * (a[0] * b[1] - a[1] * b[0])
        }
        4 => {
            let a = sub(&vertices[cell[1]], &p0);
            let b = sub(&vertices[cell[2]], &p0);
            let c = sub(&vertices[cell[3]], &p0);
            dot(&a, &cross(&b, &c)) / 6.0
        }
        _ => unreachable!("cells have 3 or 4 vertices"),
    }
}

fn centroid(vertices: &[Point], ids: &[usize]) -> Point {
    let mut c = [0.0; 3];
    for &i in ids {
        for k in 0..3 {
            c[k] += vertices[i][k];
        }
    }
    let w = 1.0 / ids.len() as f64;
    [c[0] * w, c[1] * w, c[2] * w]
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    let d = sub(a, b);
    dot(&d, &d).sqrt()
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Point {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut x = [0.0; 3];
    for col in 0..3 {
        let mut m = *a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        x[col] = det(&m) / d;
    }
    x
}
