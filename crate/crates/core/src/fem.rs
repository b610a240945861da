//! P1 tensor finite elements: assembled linear operators, P0 control
//! couplings, interpolation, and the quadrature-based bulk potential terms.
//!
//! Tensor fields are stored node-major: coefficient `i` of vertex `v` sits at
//! `v * ncoef + i`. The elastic, mass and boundary operators are
//! channel-diagonal in the orthonormal basis, so they are kept as scalar
//! matrices and applied per channel.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{BlockCsr, CsrMatrix, SparsityPattern};
use crate::mesh::{Mesh, Point};
use crate::qtensor::{BulkPotential, Dim, QCoeffs, MAX_COEF};
use crate::quadrature::SimplexRule;

/// Quadrature degree for the bulk potential terms.
pub const BULK_QUADRATURE_DEGREE: usize = 4;

/// Assembled linear operators of the semi-discrete problem.
#[derive(Clone, Debug)]
pub struct Operators {
    dim: Dim,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    boundary_mass: CsrMatrix,
    boundary_coupling: CsrMatrix,
    domain_coupling: CsrMatrix,
    face_mass: Vec<f64>,
    cell_mass: Vec<f64>,
}

impl Operators {
    pub fn assemble(mesh: &Mesh) -> Self {
        let dim = mesh.dim();
        let d = dim.get();
        let nv = mesh.n_vertices();
        let rows: Vec<Vec<usize>> = (0..nv)
            .map(|v| {
                let mut r = mesh.neighbors(v).to_vec();
                r.push(v);
                r
            })
            .collect();
        let pattern = Arc::new(SparsityPattern::from_rows(nv, rows));

        let mut mass = CsrMatrix::zeros(pattern.clone());
        let mut stiffness = CsrMatrix::zeros(pattern.clone());
        let mut boundary_mass = CsrMatrix::zeros(pattern.clone());

        let mass_scale = 1.0 / ((d + 1) * (d + 2)) as f64;
        for (c, ids) in mesh.cells().enumerate() {
            let vol = mesh.cell_volumes()[c];
            let grads = barycentric_gradients(mesh, ids);
            for a in 0..=d {
                for b in 0..=d {
                    let m = if a == b { 2.0 } else { 1.0 } * vol * mass_scale;
                    mass.add_at(ids[a], ids[b], m);
                    let g: f64 = (0..d).map(|k| grads[a][k] * grads[b][k]).sum();
                    stiffness.add_at(ids[a], ids[b], vol * g);
                }
            }
        }

        let face_scale = 1.0 / (d * (d + 1)) as f64;
        for (f, ids) in mesh.boundary_faces().enumerate() {
            let area = mesh.face_areas()[f];
            for a in 0..d {
                for b in 0..d {
                    let m = if a == b { 2.0 } else { 1.0 } * area * face_scale;
                    boundary_mass.add_at(ids[a], ids[b], m);
                }
            }
        }

        let mut face_rows = vec![Vec::new(); nv];
        for (f, ids) in mesh.boundary_faces().enumerate() {
            for &v in ids {
                face_rows[v].push(f);
            }
        }
        let mut boundary_coupling = CsrMatrix::zeros(Arc::new(SparsityPattern::from_rows(
            mesh.n_boundary_faces(),
            face_rows,
        )));
        for (f, ids) in mesh.boundary_faces().enumerate() {
            let share = mesh.face_areas()[f] / d as f64;
            for &v in ids {
                boundary_coupling.add_at(v, f, share);
            }
        }

        let mut cell_rows = vec![Vec::new(); nv];
        for (c, ids) in mesh.cells().enumerate() {
            for &v in ids {
                cell_rows[v].push(c);
            }
        }
        let mut domain_coupling = CsrMatrix::zeros(Arc::new(SparsityPattern::from_rows(
            mesh.n_cells(),
            cell_rows,
        )));
        for (c, ids) in mesh.cells().enumerate() {
            let share = mesh.cell_volumes()[c] / (d + 1) as f64;
            for &v in ids {
                domain_coupling.add_at(v, c, share);
            }
        }

        Operators {
            dim,
            mass,
            stiffness,
            boundary_mass,
            boundary_coupling,
            domain_coupling,
            face_mass: mesh.face_areas().to_vec(),
            cell_mass: mesh.cell_volumes().to_vec(),
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn ncoef(&self) -> usize {
        self.dim.ncoef()
    }

    /// Shared vertex-vertex sparsity pattern of `M`, `K`, `B`.
    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        self.mass.pattern()
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn boundary_mass(&self) -> &CsrMatrix {
        &self.boundary_mass
    }

    /// `C_Γ`: vertex rows, boundary-face columns, `(phi_v, 1_F)_Γ`.
    pub fn boundary_coupling(&self) -> &CsrMatrix {
        &self.boundary_coupling
    }

    /// `C_Ω`: vertex rows, cell columns, `(phi_v, 1_T)`.
    pub fn domain_coupling(&self) -> &CsrMatrix {
        &self.domain_coupling
    }

    /// Diagonal P0 mass on boundary faces (face measures).
    pub fn face_mass(&self) -> &[f64] {
        &self.face_mass
    }

    /// Diagonal P0 mass on cells (cell volumes).
    pub fn cell_mass(&self) -> &[f64] {
        &self.cell_mass
    }

    /// `(a, b)_{P0}` with a diagonal entity mass.
    pub fn p0_inner(weights: &[f64], a: &[f64], b: &[f64], ncoef: usize) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(e, w)| {
                let r = e * ncoef..(e + 1) * ncoef;
                w * a[r.clone()]
                    .iter()
                    .zip(&b[r])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Gradients of the barycentric coordinates of a cell.
fn barycentric_gradients(mesh: &Mesh, ids: &[usize]) -> [[f64; 3]; 4] {
    let p = mesh.vertices();
    let d = mesh.dim().get();
    let mut jac = [[0.0; 3]; 3];
    for k in 0..d {
        for r in 0..d {
            jac[r][k] = p[ids[k + 1]][r] - p[ids[0]][r];
        }
    }
    let mut g = [[0.0; 3]; 4];
    match d {
        2 => {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            // Rows of the inverse Jacobian.
            g[1] = [jac[1][1] / det, -jac[0][1] / det, 0.0];
            g[2] = [-jac[1][0] / det, jac[0][0] / det, 0.0];
        }
        _ => {
            let c0 = [jac[0][0], jac[1][0], jac[2][0]];
            let c1 = [jac[0][1], jac[1][1], jac[2][1]];
            let c2 = [jac[0][2], jac[1][2], jac[2][2]];
            let det = crate::mesh::dot(&c0, &crate::mesh::cross(&c1, &c2));
            let r0 = crate::mesh::cross(&c1, &c2);
            let r1 = crate::mesh::cross(&c2, &c0);
            let r2 = crate::mesh::cross(&c0, &c1);
            for k in 0..3 {
                g[1][k] = r0[k] / det;
                g[2][k] = r1[k] / det;
                g[3][k] = r2[k] / det;
            }
        }
    }
    for k in 0..3 {
        g[0][k] = -(1..=d).map(|a| g[a][k]).sum::<f64>();
    }
    g
}

fn check_finite(q: &QCoeffs, what: &str, at: &Point) -> Result<()> {
    if q.as_slice().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{what} is not finite at ({:.4}, {:.4}, {:.4})",
            at[0], at[1], at[2]
        )))
    }
}

fn gather(
    mut f: impl FnMut(&Point) -> QCoeffs,
    points: impl Iterator<Item = Point>,
    ncoef: usize,
    what: &str,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in points {
        let q = f(&p);
        if q.as_slice().len() != ncoef {
            return Err(Error::Input(format!(
                "{what} returned {} coefficients, expected {ncoef}",
                q.as_slice().len()
            )));
        }
        check_finite(&q, what, &p)?;
        out.extend_from_slice(q.as_slice());
    }
    Ok(out)
}

/// Lagrange interpolant: vertex values of `f`.
pub fn interpolate(mesh: &Mesh, f: impl FnMut(&Point) -> QCoeffs) -> Result<Vec<f64>> {
    gather(
        f,
        mesh.vertices().iter().copied(),
        mesh.dim().ncoef(),
        "interpolated field",
    )
}

/// P0 boundary field from values at face centroids.
pub fn interpolate_faces(mesh: &Mesh, f: impl FnMut(&Point) -> QCoeffs) -> Result<Vec<f64>> {
    gather(
        f,
        (0..mesh.n_boundary_faces()).map(|k| mesh.face_centroid(k)),
        mesh.dim().ncoef(),
        "boundary field",
    )
}

/// P0 cell field from values at cell centroids.
pub fn interpolate_cells(mesh: &Mesh, f: impl FnMut(&Point) -> QCoeffs) -> Result<Vec<f64>> {
    gather(
        f,
        (0..mesh.n_cells()).map(|k| mesh.cell_centroid(k)),
        mesh.dim().ncoef(),
        "cell field",
    )
}

/// Trace of a P1 field on each boundary face, averaged to P0.
pub fn face_average(mesh: &Mesh, field: &[f64]) -> Vec<f64> {
    let n = mesh.dim().ncoef();
    let d = mesh.dim().get();
    let mut out = vec![0.0; mesh.n_boundary_faces() * n];
    for (f, ids) in mesh.boundary_faces().enumerate() {
        for &v in ids {
            for i in 0..n {
                out[f * n + i] += field[v * n + i] / d as f64;
            }
        }
    }
    out
}

/// `L2` distance between a P1 field and a pointwise function.
pub fn l2_error(
    mesh: &Mesh,
    field: &[f64],
    mut f: impl FnMut(&Point) -> QCoeffs,
    degree: usize,
) -> f64 {
    let dim = mesh.dim();
    let d = dim.get();
    let n = dim.ncoef();
    let rule = SimplexRule::new(dim, degree);
    let mut sum = 0.0;
    for (c, ids) in mesh.cells().enumerate() {
        let vol = mesh.cell_volumes()[c];
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            let mut x = [0.0; 3];
            let mut qh = [0.0; MAX_COEF];
            for a in 0..=d {
                let p = mesh.vertices()[ids[a]];
                for k in 0..3 {
                    x[k] += lam[a] * p[k];
                }
                for i in 0..n {
                    qh[i] += lam[a] * field[ids[a] * n + i];
                }
            }
            let q = f(&x);
            let e: f64 = (0..n).map(|i| (q.as_slice()[i] - qh[i]).powi(2)).sum();
            sum += vol * w * e;
        }
    }
    sum.sqrt()
}

/// Mesh, assembled operators and the bulk potential with its quadrature.
#[derive(Clone, Debug)]
pub struct Discretization {
    mesh: Mesh,
    ops: Operators,
    potential: BulkPotential,
    rule: SimplexRule,
    cell_positions: Vec<[usize; 16]>,
}

impl Discretization {
    pub fn new(mesh: Mesh, potential: BulkPotential) -> Result<Self> {
        Self::with_degree(mesh, potential, BULK_QUADRATURE_DEGREE)
    }

    pub fn with_degree(mesh: Mesh, potential: BulkPotential, degree: usize) -> Result<Self> {
        if mesh.dim() != potential.dim() {
            return Err(Error::Config(format!(
                "mesh dimension {} does not match potential dimension {}",
                mesh.dim().get(),
                potential.dim().get()
            )));
        }
        let ops = Operators::assemble(&mesh);
        let rule = SimplexRule::new(mesh.dim(), degree);
        let nl = mesh.dim().get() + 1;
        let pattern = ops.pattern().clone();
        let cell_positions = mesh
            .cells()
            .map(|ids| {
                let mut pos = [0usize; 16];
                for a in 0..nl {
                    for b in 0..nl {
                        pos[a * nl + b] = pattern
                            .position(ids[a], ids[b])
                            .expect("cell pair in pattern");
                    }
                }
                pos
            })
            .collect();
        Ok(Discretization {
            mesh,
            ops,
            potential,
            rule,
            cell_positions,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn ops(&self) -> &Operators {
        &self.ops
    }

    pub fn potential(&self) -> &BulkPotential {
        &self.potential
    }

    pub fn dim(&self) -> Dim {
        self.mesh.dim()
    }

    pub fn ncoef(&self) -> usize {
        self.mesh.dim().ncoef()
    }

    pub fn state_len(&self) -> usize {
        self.mesh.n_vertices() * self.ncoef()
    }

    fn for_each_point(
        &self,
        q: &[f64],
        mut visit: impl FnMut(usize, &[usize], f64, &[f64; 4], &[f64]),
    ) {
        let n = self.ncoef();
        let nl = self.dim().get() + 1;
        let mut cq = [0.0; MAX_COEF];
        for (c, ids) in self.mesh.cells().enumerate() {
            let vol = self.mesh.cell_volumes()[c];
            for (lam, w) in self.rule.points.iter().zip(&self.rule.weights) {
                cq[..n].fill(0.0);
                for a in 0..nl {
                    let qa = &q[ids[a] * n..(ids[a] + 1) * n];
                    for i in 0..n {
                        cq[i] += lam[a] * qa[i];
                    }
                }
                visit(c, ids, vol * w, lam, &cq[..n]);
            }
        }
    }

    /// `int psi(Q_h)`.
    pub fn bulk_energy(&self, q: &[f64]) -> f64 {
        let mut e = 0.0;
        self.for_each_point(q, |_, _, wv, _, cq| e += wv * self.potential.psi(cq));
        e
    }

    /// `N(Q)_a = int psi'(Q_h) phi_a`.
    pub fn bulk_load(&self, q: &[f64], out: &mut [f64]) {
        let n = self.ncoef();
        let nl = self.dim().get() + 1;
        out.fill(0.0);
        let mut g = [0.0; MAX_COEF];
        self.for_each_point(q, |_, ids, wv, lam, cq| {
            self.potential.psi_grad(cq, &mut g[..n]);
            for a in 0..nl {
                let s = wv * lam[a];
                let oa = &mut out[ids[a] * n..(ids[a] + 1) * n];
                for i in 0..n {
                    oa[i] += s * g[i];
                }
            }
        });
    }

    /// Adds `scale * H(Q)` to `jac`, where `H(Q)_ab = int psi''(Q_h) phi_a phi_b`,
    /// and writes the load `N(Q)` to `load` when given.
    pub fn add_bulk_hessian(
        &self,
        q: &[f64],
        scale: f64,
        jac: &mut BlockCsr,
        mut load: Option<&mut [f64]>,
    ) {
        let n = self.ncoef();
        let nn = n * n;
        let nl = self.dim().get() + 1;
        debug_assert_eq!(jac.block_size(), n);
        if let Some(l) = load.as_deref_mut() {
            l.fill(0.0);
        }
        let mut g = [0.0; MAX_COEF];
        let mut h = [0.0; MAX_COEF * MAX_COEF];
        let mut local = [0.0; 16 * MAX_COEF * MAX_COEF];
        let mut current = usize::MAX;
        let flush = |c: usize, local: &mut [f64], jac: &mut BlockCsr| {
            let pos = &self.cell_positions[c];
            for a in 0..nl {
                for b in a..nl {
                    let src = &local[(a * nl + b) * nn..(a * nl + b + 1) * nn];
                    for blk in [pos[a * nl + b], pos[b * nl + a]] {
                        let dst = jac.block_mut(blk);
                        for k in 0..nn {
                            dst[k] += scale * src[k];
                        }
                        if a == b {
                            break;
                        }
                    }
                }
            }
            local.fill(0.0);
        };
        self.for_each_point(q, |c, ids, wv, lam, cq| {
            if c != current {
                if current != usize::MAX {
                    flush(current, &mut local, jac);
                }
                current = c;
            }
            self.potential.psi_grad_hess(cq, &mut g[..n], &mut h[..nn]);
            for a in 0..nl {
                let sa = wv * lam[a];
                if let Some(l) = load.as_deref_mut() {
                    let la = &mut l[ids[a] * n..(ids[a] + 1) * n];
                    for i in 0..n {
                        la[i] += sa * g[i];
                    }
                }
                for b in a..nl {
                    let s = sa * lam[b];
                    let dst = &mut local[(a * nl + b) * nn..(a * nl + b + 1) * nn];
                    for k in 0..nn {
                        dst[k] += s * h[k];
                    }
                }
            }
        });
        if current != usize::MAX {
            flush(current, &mut local, jac);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::BulkParams;

    fn disc(dim: Dim, n: usize) -> Discretization {
        let params = match dim {
            Dim::Two => BulkParams::planar(),
            Dim::Three => BulkParams::spatial(),
        };
        Discretization::new(
            Mesh::unit(dim, n).unwrap(),
            BulkPotential::new(params, dim).unwrap(),
        )
        .unwrap()
    }

    fn smooth(dim: Dim) -> impl Fn(&Point) -> QCoeffs {
        move |x: &Point| {
            let mut q = QCoeffs::zeros(dim);
            for (i, c) in q.as_mut_slice().iter_mut().enumerate() {
                *c = 0.3 * ((i as f64 + 1.0) * x[0] + 0.7 * x[1] - 0.4 * x[2]).sin();
            }
            q
        }
    }

    #[test]
    fn operator_identities() {
        for (dim, n, gamma) in [(Dim::Two, 5, 4.0), (Dim::Three, 3, 6.0)] {
            let mesh = Mesh::unit(dim, n).unwrap();
            let ops = Operators::assemble(&mesh);
            let nv = mesh.n_vertices();
            let ones = vec![1.0; nv];
            assert!((ops.mass().inner(&ones, &ones, 1) - 1.0).abs() < 1e-12);
            assert!((ops.boundary_mass().inner(&ones, &ones, 1) - gamma).abs() < 1e-12);
            let k1 = ops.stiffness().apply_vec(&ones, 1);
            assert!(k1.iter().all(|x| x.abs() < 1e-12));
            for m in [ops.mass(), ops.stiffness(), ops.boundary_mass()] {
                assert!(m.asymmetry() < 1e-13);
            }
            let x1: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
            let kx = ops.stiffness().apply_vec(&x1, 1);
            for v in 0..nv {
                if !mesh.is_boundary_vertex(v) {
                    assert!(kx[v].abs() < 1e-12);
                }
            }
            let cg = ops
                .boundary_coupling()
                .apply_vec(&vec![1.0; mesh.n_boundary_faces()], 1);
            assert!((cg.iter().sum::<f64>() - gamma).abs() < 1e-12);
            let co = ops
                .domain_coupling()
                .apply_vec(&vec![1.0; mesh.n_cells()], 1);
            assert!((co.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn operators_are_channel_diagonal() {
        let mesh = Mesh::unit(Dim::Three, 2).unwrap();
        let ops = Operators::assemble(&mesh);
        let n = 5;
        let mut x = vec![0.0; mesh.n_vertices() * n];
        for v in 0..mesh.n_vertices() {
            x[v * n + 2] = v as f64 + 1.0;
        }
        for m in [ops.mass(), ops.stiffness(), ops.boundary_mass()] {
            let y = m.apply_vec(&x, n);
            for (k, yk) in y.iter().enumerate() {
                if k % n != 2 {
                    assert_eq!(*yk, 0.0);
                }
            }
        }
    }

    #[test]
    fn interpolation_rejects_non_finite() {
        let mesh = Mesh::unit(Dim::Two, 2).unwrap();
        let err = interpolate(&mesh, |x| {
            let mut q = QCoeffs::zeros(Dim::Two);
            q.as_mut_slice()[0] = 1.0 / (x[0] - 0.5);
            q
        });
        assert!(matches!(err, Err(Error::Input(_))));
        let q = QCoeffs::from_slice(Dim::Two, &[0.1, -0.2]).unwrap();
        let f = interpolate(&mesh, |_| q).unwrap();
        assert!(f.chunks(2).all(|c| c == [0.1, -0.2]));
    }

    #[test]
    fn bulk_load_is_energy_gradient() {
        let d = disc(Dim::Three, 2);
        let f = smooth(Dim::Three);
        let q = interpolate(d.mesh(), &f).unwrap();
        let mut load = vec![0.0; q.len()];
        d.bulk_load(&q, &mut load);
        let eps = 1e-6;
        for k in [0, 7, 33, 81, q.len() - 1] {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += eps;
            qm[k] -= eps;
            let fd = (d.bulk_energy(&qp) - d.bulk_energy(&qm)) / (2.0 * eps);
            assert!(
                (fd - load[k]).abs() < 1e-6 * (1.0 + load[k].abs()),
                "{k}: {fd} vs {}",
                load[k]
            );
        }
    }

    #[test]
    fn bulk_hessian_matches_load_derivative() {
        for dim in [Dim::Two, Dim::Three] {
            let d = disc(dim, 3);
            let q = interpolate(d.mesh(), smooth(dim)).unwrap();
            let dir: Vec<f64> = (0..q.len())
                .map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.01)
                .collect();
            let mut jac = BlockCsr::zeros(d.ops().pattern().clone(), d.ncoef());
            let mut load = vec![0.0; q.len()];
            d.add_bulk_hessian(&q, 1.0, &mut jac, Some(&mut load));
            let mut load2 = vec![0.0; q.len()];
            d.bulk_load(&q, &mut load2);
            for (a, b) in load.iter().zip(&load2) {
                assert!((a - b).abs() < 1e-13);
            }
            let eps = 1e-6;
            let qp: Vec<f64> = q.iter().zip(&dir).map(|(x, v)| x + eps * v).collect();
            let qm: Vec<f64> = q.iter().zip(&dir).map(|(x, v)| x - eps * v).collect();
            let (mut lp, mut lm) = (vec![0.0; q.len()], vec![0.0; q.len()]);
            d.bulk_load(&qp, &mut lp);
            d.bulk_load(&qm, &mut lm);
            let hv = jac.apply_vec(&dir);
            let num: f64 = lp
                .iter()
                .zip(&lm)
                .zip(&hv)
                .map(|((p, m), h)| ((p - m) / (2.0 * eps) - h).powi(2))
                .sum();
            let den: f64 = hv.iter().map(|h| h * h).sum();
            assert!((num / den).sqrt() < 1e-6);
        }
    }

    #[test]
    fn bulk_quadrature_is_sufficient() {
        for dim in [Dim::Two, Dim::Three] {
            let d4 = disc(dim, 4);
            let mesh = d4.mesh().clone();
            let d6 = Discretization::with_degree(
                mesh,
                d4.potential().clone(),
                BULK_QUADRATURE_DEGREE + 2,
            )
            .unwrap();
            let q = interpolate(d4.mesh(), smooth(dim)).unwrap();
            let (mut a, mut b) = (vec![0.0; q.len()], vec![0.0; q.len()]);
            d4.bulk_load(&q, &mut a);
            d6.bulk_load(&q, &mut b);
            let diff: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
            assert!(diff < 1e-8 * norm, "{dim:?}: {diff} vs {norm}");
        }
    }

    #[test]
    fn face_average_of_constant() {
        let mesh = Mesh::unit(Dim::Three, 2).unwrap();
        let field = vec![0.5; mesh.n_vertices() * 5];
        assert!(face_average(&mesh, &field)
            .iter()
            .all(|x| (x - 0.5).abs() < 1e-15));
    }
}
