//! Symmetric traceless tensors and the Landau-de Gennes bulk potential.
//!
//! Tensors are stored as coefficients in a fixed orthonormal basis `{E_i}`
//! of the symmetric traceless matrices (2 coefficients for `d = 2`, 5 for
//! `d = 3`). Because the basis is orthonormal under the Frobenius product,
//! `|Q|^2 = tr(Q^2) = sum(c_i^2)`, and the coefficient gradient of any scalar
//! function of `Q` is automatically the traceless projection of its matrix
//! derivative.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Largest number of basis coefficients (`d = 3`).
pub const MAX_COEF: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn new(d: usize) -> Result<Self> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            _ => Err(Error::Config(format!("dimension must be 2 or 3, got {d}"))),
        }
    }

    pub fn get(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Number of independent coefficients of a symmetric traceless tensor.
    pub fn ncoef(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 5,
        }
    }
}

impl TryFrom<usize> for Dim {
    type Error = String;

    fn try_from(d: usize) -> std::result::Result<Self, String> {
        Dim::new(d).map_err(|e| e.to_string())
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

/// Coefficients of a symmetric traceless tensor, `Q = sum_i c_i E_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QCoeffs {
    dim: Dim,
    c: [f64; MAX_COEF],
}

impl QCoeffs {
    pub fn zeros(dim: Dim) -> Self {
        QCoeffs {
            dim,
            c: [0.0; MAX_COEF],
        }
    }

    pub fn from_slice(dim: Dim, c: &[f64]) -> Result<Self> {
        if c.len() != dim.ncoef() {
            return Err(Error::Input(format!(
                "expected {} coefficients for d = {}, got {}",
                dim.ncoef(),
                dim.get(),
                c.len()
            )));
        }
        let mut q = Self::zeros(dim);
        q.c[..c.len()].copy_from_slice(c);
        Ok(q)
    }

    /// Unit coefficient vector `e_i`, i.e. the basis tensor `E_i`.
    pub fn unit(dim: Dim, i: usize) -> Self {
        assert!(i < dim.ncoef(), "basis index {i} out of range");
        let mut q = Self::zeros(dim);
        q.c[i] = 1.0;
        q
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c[..self.dim.ncoef()]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        let n = self.dim.ncoef();
        &mut self.c[..n]
    }

    pub fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|x| x * x).sum()
    }

    /// Frobenius norm `|Q|`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &QCoeffs) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl Add for QCoeffs {
    type Output = QCoeffs;

    fn add(mut self, rhs: QCoeffs) -> QCoeffs {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        self
    }
}

impl Sub for QCoeffs {
    type Output = QCoeffs;

    fn sub(mut self, rhs: QCoeffs) -> QCoeffs {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for QCoeffs {
    type Output = QCoeffs;

    fn mul(mut self, s: f64) -> QCoeffs {
        for a in self.c.iter_mut() {
            *a *= s;
        }
        self
    }
}

/// Orthonormal basis of the symmetric traceless `d x d` matrices.
///
/// `d = 2`: `diag(1,-1)/sqrt2`, `offdiag(1,1)/sqrt2`.
/// `d = 3`: `diag(1,-1,0)/sqrt2`, `diag(1,1,-2)/sqrt6`, and the three
/// symmetric off-diagonal pairs with entries `1/sqrt2` in the order
/// `(1,2)`, `(1,3)`, `(2,3)`.
#[derive(Clone, Debug)]
pub struct Basis {
    dim: Dim,
    mats: Vec<Mat3>,
    /// `tr(E_i E_j E_k)`, dense `n^3`.
    triple: Vec<f64>,
}

impl Basis {
    pub fn new(dim: Dim) -> Self {
        let s2 = FRAC_1_SQRT_2;
        let mats: Vec<Mat3> = match dim {
            Dim::Two => vec![
                [[s2, 0.0, 0.0], [0.0, -s2, 0.0], [0.0, 0.0, 0.0]],
                [[0.0, s2, 0.0], [s2, 0.0, 0.0], [0.0, 0.0, 0.0]],
            ],
            Dim::Three => {
                let s6 = 1.0 / 6f64.sqrt();
                vec![
                    [[s2, 0.0, 0.0], [0.0, -s2, 0.0], [0.0, 0.0, 0.0]],
                    [[s6, 0.0, 0.0], [0.0, s6, 0.0], [0.0, 0.0, -2.0 * s6]],
                    [[0.0, s2, 0.0], [s2, 0.0, 0.0], [0.0, 0.0, 0.0]],
                    [[0.0, 0.0, s2], [0.0, 0.0, 0.0], [s2, 0.0, 0.0]],
                    [[0.0, 0.0, 0.0], [0.0, 0.0, s2], [0.0, s2, 0.0]],
                ]
            }
        };
        let n = mats.len();
        let mut triple = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                let ij = mat_mul(&mats[i], &mats[j]);
                for k in 0..n {
                    triple[(i * n + j) * n + k] = frobenius(&ij, &mats[k]);
                }
            }
        }
        Basis { dim, mats, triple }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn ncoef(&self) -> usize {
        self.dim.ncoef()
    }

    pub fn matrix(&self, i: usize) -> &Mat3 {
        &self.mats[i]
    }

    pub fn to_matrix(&self, q: &QCoeffs) -> Mat3 {
        self.coeffs_to_matrix(q.as_slice())
    }

    pub fn coeffs_to_matrix(&self, c: &[f64]) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (ci, e) in c.iter().zip(&self.mats) {
            for r in 0..3 {
                for s in 0..3 {
                    m[r][s] += ci * e[r][s];
                }
            }
        }
        m
    }

    /// Coefficients of a symmetric traceless matrix. Entries outside the
    /// leading `d x d` block must vanish.
    pub fn from_matrix(&self, m: &Mat3) -> Result<QCoeffs> {
        let d = self.dim.get();
        let trace: f64 = (0..d).map(|i| m[i][i]).sum();
        if trace.abs() >= 1e-10 {
            return Err(Error::Precondition(format!(
                "matrix is not traceless (trace {trace:.3e})"
            )));
        }
        let mut asym = 0.0f64;
        let mut outside = 0.0f64;
        for r in 0..3 {
            for s in 0..3 {
                if r < d && s < d {
                    asym += (m[r][s] - m[s][r]).powi(2);
                } else {
                    outside = outside.max(m[r][s].abs());
                }
            }
        }
        if asym.sqrt() >= 1e-10 {
            return Err(Error::Precondition(format!(
                "matrix is not symmetric (|M - M^T| = {:.3e})",
                asym.sqrt()
            )));
        }
        if outside > 0.0 {
            return Err(Error::Precondition(format!(
                "matrix has entries outside the leading {d}x{d} block"
            )));
        }
        let mut q = QCoeffs::zeros(self.dim);
        for (ci, e) in q.as_mut_slice().iter_mut().zip(&self.mats) {
            *ci = frobenius(m, e);
        }
        Ok(q)
    }

    /// `tr(Q^3)` from coefficients.
    pub fn trace_cubed(&self, c: &[f64]) -> f64 {
        if self.dim == Dim::Two {
            return 0.0;
        }
        let n = self.ncoef();
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                let cij = c[i] * c[j];
                let row = &self.triple[(i * n + j) * n..(i * n + j + 1) * n];
                for k in 0..n {
                    t += cij * c[k] * row[k];
                }
            }
        }
        t
    }

    /// `out_i = tr(E_i Q^2)` (coefficients of the traceless part of `Q^2`)
    /// and `tc_ij = tr(E_i E_j Q)`.
    fn square_terms(&self, c: &[f64], out: &mut [f64], tc: &mut [f64]) {
        let n = self.ncoef();
        for i in 0..n {
            let mut si = 0.0;
            for j in 0..n {
                let row = &self.triple[(i * n + j) * n..(i * n + j + 1) * n];
                let t: f64 = row.iter().zip(c).map(|(a, b)| a * b).sum();
                tc[i * n + j] = t;
                si += t * c[j];
            }
            out[i] = si;
        }
    }

    /// Uniaxial tensor `s (n n^T - I/d)`.
    pub fn uniaxial(&self, s: f64, n: &[f64]) -> Result<QCoeffs> {
        let d = self.dim.get();
        if n.len() != d {
            return Err(Error::Precondition(format!(
                "director must have {d} components, got {}",
                n.len()
            )));
        }
        let len = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (len - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "director must be a unit vector (|n| = {len})"
            )));
        }
        let mut q = QCoeffs::zeros(self.dim);
        // E_i is traceless, so E_i : (n n^T - I/d) = n^T E_i n.
        for (ci, e) in q.as_mut_slice().iter_mut().zip(&self.mats) {
            let mut v = 0.0;
            for r in 0..d {
                for t in 0..d {
                    v += n[r] * e[r][t] * n[t];
                }
            }
            *ci = s * v;
        }
        Ok(q)
    }

    /// Largest eigenvalue and a unit eigenvector (first nonzero component
    /// positive). For `Q = 0` returns `(0, e_1)`.
    pub fn eig_max(&self, q: &QCoeffs) -> (f64, [f64; 3]) {
        self.eig_max_coeffs(q.as_slice())
    }

    pub fn eig_max_coeffs(&self, c: &[f64]) -> (f64, [f64; 3]) {
        match self.dim {
            Dim::Two => {
                let x = c[0] * FRAC_1_SQRT_2;
                let y = c[1] * FRAC_1_SQRT_2;
                let lam = x.hypot(y);
                if lam == 0.0 {
                    return (0.0, [1.0, 0.0, 0.0]);
                }
                let phi = 0.5 * y.atan2(x);
                (lam, normalize_sign([phi.cos(), phi.sin(), 0.0]))
            }
            Dim::Three => {
                let m = self.coeffs_to_matrix(c);
                let (lams, v1) = sym3_eig_max(&m);
                (lams[0], v1)
            }
        }
    }

    /// Eigenvalues in descending order (`d` of them, trailing zero for `d = 2`).
    pub fn eigenvalues(&self, c: &[f64]) -> [f64; 3] {
        match self.dim {
            Dim::Two => {
                let lam = (c[0] * c[0] + c[1] * c[1]).sqrt() * FRAC_1_SQRT_2;
                [lam, -lam, 0.0]
            }
            Dim::Three => sym3_eigenvalues(&self.coeffs_to_matrix(c)),
        }
    }

    /// Normalized biaxiality `1 - 6 tr(Q^3)^2 / tr(Q^2)^3`, zero at `Q = 0`.
    pub fn biaxiality(&self, q: &QCoeffs) -> f64 {
        self.biaxiality_coeffs(q.as_slice())
    }

    pub fn biaxiality_coeffs(&self, c: &[f64]) -> f64 {
        let r: f64 = c.iter().map(|x| x * x).sum();
        if r == 0.0 {
            return 0.0;
        }
        let t3 = self.trace_cubed(c);
        1.0 - 6.0 * t3 * t3 / (r * r * r)
    }
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn frobenius(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

fn normalize_sign(mut v: [f64; 3]) -> [f64; 3] {
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    for x in v.iter_mut() {
        *x /= len;
    }
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
    v
}

/// Eigenvalues of a symmetric 3x3 matrix, descending (trigonometric
/// solution of the characteristic cubic).
pub fn sym3_eigenvalues(a: &Mat3) -> [f64; 3] {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(|x, y| y.total_cmp(x));
        return d;
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (*x - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    [l1, l2, l3]
}

fn sym3_eig_max(a: &Mat3) -> ([f64; 3], [f64; 3]) {
    let lams = sym3_eigenvalues(a);
    let scale = lams[0].abs().max(lams[2].abs());
    if scale == 0.0 {
        return (lams, [1.0, 0.0, 0.0]);
    }
    let shifted = |lam: f64| {
        let mut m = *a;
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= lam;
        }
        m
    };
    if lams[0] - lams[1] > 1e-8 * scale {
        // Simple top eigenvalue: kernel of A - l1 I from row cross products.
        let m = shifted(lams[0]);
        let mut best = [0.0; 3];
        let mut best_norm = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let c = cross(&m[i], &m[j]);
            let nrm = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if best_norm > 0.0 {
            return (lams, normalize_sign(best));
        }
    }
    // Repeated top eigenvalue: rows of A - l3 I span the top eigenspace.
    let m = shifted(lams[2]);
    let row = m
        .iter()
        .max_by(|x, y| norm3(x).total_cmp(&norm3(y)))
        .copied()
        .unwrap_or([1.0, 0.0, 0.0]);
    if norm3(&row) == 0.0 {
        return (lams, [1.0, 0.0, 0.0]);
    }
    (lams, normalize_sign(row))
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Coefficients of the double-well bulk potential and the cutoff band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BulkParams {
    pub a0: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    #[serde(default = "default_b1")]
    pub b1: f64,
    #[serde(default = "default_b2")]
    pub b2: f64,
}

fn default_b1() -> f64 {
    1.0
}

fn default_b2() -> f64 {
    2.0
}

impl BulkParams {
    /// Two-dimensional point-defect constants (uniaxial minimum at `s = 0.7`).
    pub fn planar() -> Self {
        BulkParams {
            a0: 1.0,
            a2: 16.32653061225,
            a3: 0.0,
            a4: 66.63890045814,
            b1: 1.0,
            b2: 2.0,
        }
    }

    /// Three-dimensional line-defect constants (uniaxial minimum at `s ~ 0.700005531`).
    pub fn spatial() -> Self {
        BulkParams {
            a0: 1.0,
            a2: 7.5021037403,
            a3: 60.975813166,
            a4: 66.519068908,
            b1: 1.0,
            b2: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a0, self.a2, self.a3, self.a4, self.b1, self.b2]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("bulk coefficients must be finite".into()));
        }
        if !(self.a0 > 0.0 && self.a2 > 0.0 && self.a4 > 0.0 && self.a3 >= 0.0) {
            return Err(Error::Config(
                "bulk coefficients require a0 > 0, a2 > 0, a3 >= 0, a4 > 0".into(),
            ));
        }
        if !(self.b1 >= 1.0 && self.b1 < self.b2) {
            return Err(Error::Config(format!(
                "cutoff band requires 1 <= b1 < b2 (got b1 = {}, b2 = {})",
                self.b1, self.b2
            )));
        }
        Ok(())
    }

    /// Scalar order parameter `s` of the uniaxial critical point of the
    /// unmodified double well.
    pub fn uniaxial_order(&self, dim: Dim) -> f64 {
        match dim {
            // -a2 + a4 s^2/2 = 0
            Dim::Two => (2.0 * self.a2 / self.a4).sqrt(),
            // 2 a4 s^2 - a3 s - 3 a2 = 0
            Dim::Three => {
                (self.a3 + (self.a3 * self.a3 + 24.0 * self.a2 * self.a4).sqrt()) / (4.0 * self.a4)
            }
        }
    }
}

/// `(rho, rho', rho'')` of the quintic smoothstep cutoff: 1 below `b1`,
/// 0 above `b2`, monotone and `C^2` in between.
pub fn cutoff_rho(r: f64, b1: f64, b2: f64) -> Result<(f64, f64, f64)> {
    if !(r >= 0.0) {
        return Err(Error::Precondition(format!(
            "cutoff argument must be non-negative, got {r}"
        )));
    }
    Ok(cutoff(r, b1, b2))
}

#[inline]
fn cutoff(r: f64, b1: f64, b2: f64) -> (f64, f64, f64) {
    if r <= b1 {
        return (1.0, 0.0, 0.0);
    }
    if r >= b2 {
        return (0.0, 0.0, 0.0);
    }
    let len = b2 - b1;
    let t = (r - b1) / len;
    let t2 = t * t;
    let s = t2 * t * (10.0 - 15.0 * t + 6.0 * t2);
    let ds = 30.0 * t2 * (1.0 - t) * (1.0 - t);
    let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    (1.0 - s, -ds / len, -dds / (len * len))
}

/// Modified bulk potential
/// `psi(Q) = psi~(Q) rho(|Q|^2) + a4^2 |Q|^2 (1 - rho(|Q|^2))`
/// with its coefficient gradient and Hessian.
#[derive(Clone, Debug)]
pub struct BulkPotential {
    params: BulkParams,
    basis: Basis,
}

impl BulkPotential {
    pub fn new(params: BulkParams, dim: Dim) -> Result<Self> {
        params.validate()?;
        Ok(BulkPotential {
            params,
            basis: Basis::new(dim),
        })
    }

    pub fn params(&self) -> &BulkParams {
        &self.params
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> Dim {
        self.basis.dim()
    }

    pub fn ncoef(&self) -> usize {
        self.basis.ncoef()
    }

    fn tail(&self) -> f64 {
        self.params.a4 * self.params.a4
    }

    /// Unmodified double well `a0 - a2/2 trQ^2 - a3/3 trQ^3 + a4/4 (trQ^2)^2`.
    pub fn psi_tilde(&self, c: &[f64]) -> f64 {
        let p = &self.params;
        let r: f64 = c.iter().map(|x| x * x).sum();
        let t3 = self.basis.trace_cubed(c);
        p.a0 - 0.5 * p.a2 * r - p.a3 / 3.0 * t3 + 0.25 * p.a4 * r * r
    }

    pub fn psi(&self, c: &[f64]) -> f64 {
        let r: f64 = c.iter().map(|x| x * x).sum();
        let g = self.psi_tilde(c);
        if r <= self.params.b1 {
            return g;
        }
        let (rho, _, _) = cutoff(r, self.params.b1, self.params.b2);
        let kr = self.tail() * r;
        kr + rho * (g - kr)
    }

    pub fn psi_grad(&self, c: &[f64], grad: &mut [f64]) {
        let n = self.ncoef();
        let mut hess = [0.0; MAX_COEF * MAX_COEF];
        self.eval(c, Some(grad), false, &mut hess[..n * n]);
    }

    /// Dense `n x n` Hessian in coefficient space (row-major).
    pub fn psi_hess(&self, c: &[f64], hess: &mut [f64]) {
        let n = self.ncoef();
        let mut grad = [0.0; MAX_COEF];
        self.eval(c, Some(&mut grad[..n]), true, hess);
    }

    /// Gradient and Hessian together (the assembly hot path).
    pub fn psi_grad_hess(&self, c: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        self.eval(c, Some(grad), true, hess);
    }

    pub fn psi_hess_apply(&self, c: &[f64], p: &[f64], out: &mut [f64]) {
        let n = self.ncoef();
        let mut h = [0.0; MAX_COEF * MAX_COEF];
        self.psi_hess(c, &mut h[..n * n]);
        for i in 0..n {
            out[i] = (0..n).map(|j| h[i * n + j] * p[j]).sum();
        }
    }

    fn eval(&self, c: &[f64], grad: Option<&mut [f64]>, want_hess: bool, hess: &mut [f64]) {
        let p = &self.params;
        let n = self.ncoef();
        let r: f64 = c.iter().map(|x| x * x).sum();
        let mut sq = [0.0; MAX_COEF];
        let mut tc = [0.0; MAX_COEF * MAX_COEF];
        let cubic = self.dim() == Dim::Three && p.a3 != 0.0;
        if cubic {
            self.basis.square_terms(c, &mut sq[..n], &mut tc[..n * n]);
        }
        // Gradient and Hessian of psi~.
        let lin = -p.a2 + p.a4 * r;
        let mut g = [0.0; MAX_COEF];
        for i in 0..n {
            g[i] = lin * c[i] - p.a3 * sq[i];
        }
        if want_hess {
            for i in 0..n {
                for j in 0..n {
                    let mut h = 2.0 * p.a4 * c[i] * c[j] - 2.0 * p.a3 * tc[i * n + j];
                    if i == j {
                        h += lin;
                    }
                    hess[i * n + j] = h;
                }
            }
        }
        if r > p.b1 {
            let (rho, drho, ddrho) = cutoff(r, p.b1, p.b2);
            let kappa = self.tail();
            let t3 = if cubic {
                (0..n).map(|i| c[i] * sq[i]).sum()
            } else {
                0.0
            };
            let psit = p.a0 - 0.5 * p.a2 * r - p.a3 / 3.0 * t3 + 0.25 * p.a4 * r * r;
            // psi = kappa r + rho D with D = psi~ - kappa r.
            let dval = psit - kappa * r;
            let mut dgrad = [0.0; MAX_COEF];
            for i in 0..n {
                dgrad[i] = g[i] - 2.0 * kappa * c[i];
            }
            if want_hess {
                for i in 0..n {
                    for j in 0..n {
                        let mut dh = hess[i * n + j];
                        if i == j {
                            dh -= 2.0 * kappa;
                        }
                        let mut h = rho * dh
                            + 2.0 * drho * (c[i] * dgrad[j] + dgrad[i] * c[j])
                            + 4.0 * dval * ddrho * c[i] * c[j];
                        if i == j {
                            h += 2.0 * kappa + 2.0 * dval * drho;
                        }
                        hess[i * n + j] = h;
                    }
                }
            }
            for i in 0..n {
                g[i] = 2.0 * kappa * c[i] + rho * dgrad[i] + 2.0 * drho * dval * c[i];
            }
        }
        if let Some(grad) = grad {
            grad[..n].copy_from_slice(&g[..n]);
        }
    }

    /// Stabilization constant `d2` of the convex split
    /// `psi = (d2/2 |Q|^2 + psi) - d2/2 |Q|^2`.
    ///
    /// `d2 = 2 C`, where `C` is a computable bound on the negative curvature
    /// of `psi` over all of `Q`, including the cutoff band where the blend
    /// with the quadratic tail contributes `rho'` and `rho''` terms.
    pub fn stabilization(&self) -> f64 {
        let p = &self.params;
        let kappa = self.tail();
        let len = p.b2 - p.b1;
        let r1 = 15.0 / (8.0 * len);
        let r2 = 10.0 / (3f64.sqrt() * len * len);
        let rb = p.b2.sqrt();
        let g_max = p.a0 + 0.5 * p.a2 * p.b2 + p.a3 / 3.0 * p.b2 * rb + 0.25 * p.a4 * p.b2 * p.b2;
        let d_max = g_max + kappa * p.b2;
        let dg_max = p.a2 * rb + p.a3 * p.b2 + p.a4 * p.b2 * rb + 2.0 * kappa * rb;
        let curv =
            p.a2 + 2.0 * p.a3 * rb + 4.0 * r1 * rb * dg_max + d_max * (4.0 * r2 * p.b2 + 2.0 * r1);
        2.0 * curv
    }

    /// `(psi_c, psi_e)` with `psi_e = d2/2 |Q|^2` and `psi_c - psi_e = psi`.
    pub fn convex_split(&self, c: &[f64]) -> (f64, f64) {
        let d2 = self.stabilization();
        let r: f64 = c.iter().map(|x| x * x).sum();
        let pe = 0.5 * d2 * r;
        (self.psi(c) + pe, pe)
    }

    /// Gradient of the convex part `psi_c`.
    pub fn convex_grad(&self, c: &[f64], out: &mut [f64]) {
        let d2 = self.stabilization();
        self.psi_grad(c, out);
        for (o, x) in out.iter_mut().zip(c) {
            *o += d2 * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn basis_is_orthonormal_symmetric_traceless() {
        for dim in [Dim::Two, Dim::Three] {
            let b = Basis::new(dim);
            let d = dim.get();
            for i in 0..b.ncoef() {
                let e = b.matrix(i);
                let tr: f64 = (0..d).map(|k| e[k][k]).sum();
                assert_eq!(tr, 0.0);
                for r in 0..3 {
                    for s in 0..3 {
                        assert_eq!(e[r][s], e[s][r]);
                    }
                }
                for j in 0..b.ncoef() {
                    let ip = frobenius(e, b.matrix(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn matrix_round_trip() {
        let b = Basis::new(Dim::Three);
        assert_eq!(b.to_matrix(&QCoeffs::zeros(Dim::Three)), [[0.0; 3]; 3]);
        for i in 0..5 {
            assert_eq!(b.to_matrix(&QCoeffs::unit(Dim::Three, i)), *b.matrix(i));
        }
        let mut seed = 7;
        for _ in 0..100 {
            let (x, y, z, u, v) = (
                lcg(&mut seed),
                lcg(&mut seed),
                lcg(&mut seed),
                lcg(&mut seed),
                lcg(&mut seed),
            );
            let m = [[x, u, v], [u, y, z], [v, z, -x - y]];
            let q = b.from_matrix(&m).unwrap();
            let back = b.to_matrix(&q);
            for r in 0..3 {
                for s in 0..3 {
                    assert!((back[r][s] - m[r][s]).abs() < 1e-13);
                }
            }
            let again = b.from_matrix(&back).unwrap();
            for (a, c) in again.as_slice().iter().zip(q.as_slice()) {
                assert!((a - c).abs() < 1e-14);
            }
            // Orthonormal-basis isometry.
            assert!((q.norm() - frobenius(&m, &m).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn from_matrix_rejects_bad_input() {
        let b = Basis::new(Dim::Three);
        let not_traceless = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(
            b.from_matrix(&not_traceless),
            Err(Error::Precondition(_))
        ));
        let not_symmetric = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(
            b.from_matrix(&not_symmetric),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn cutoff_regions_and_derivatives() {
        assert_eq!(cutoff_rho(0.5, 1.0, 2.0).unwrap(), (1.0, 0.0, 0.0));
        assert_eq!(cutoff_rho(3.0, 1.0, 2.0).unwrap(), (0.0, 0.0, 0.0));
        assert!(cutoff_rho(-1.0, 1.0, 2.0).is_err());
        let (rho, d1, d2) = cutoff_rho(1.5, 1.0, 2.0).unwrap();
        assert!(rho > 0.0 && rho < 1.0 && d1 < 0.0);
        let h = 1e-5;
        let f = |r: f64| cutoff_rho(r, 1.0, 2.0).unwrap();
        let fd1 = (f(1.5 + h).0 - f(1.5 - h).0) / (2.0 * h);
        let fd2 = (f(1.5 + h).1 - f(1.5 - h).1) / (2.0 * h);
        assert!((fd1 - d1).abs() < 1e-6);
        assert!((fd2 - d2).abs() < 1e-6);
        let mut prev = 1.0;
        for i in 0..=100 {
            let r = 1.0 + i as f64 / 100.0;
            let v = f(r).0;
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn psi_tilde_values() {
        let pot = BulkPotential::new(BulkParams::planar(), Dim::Two).unwrap();
        assert_eq!(pot.psi_tilde(&[0.0, 0.0]), 1.0);
        let q = pot.basis().uniaxial(0.7, &[1.0, 0.0]).unwrap();
        let p = BulkParams::planar();
        let r = 0.245;
        let want = 1.0 - 0.5 * p.a2 * r + 0.25 * p.a4 * r * r;
        assert!((q.norm_sq() - r).abs() < 1e-15);
        assert!((pot.psi_tilde(q.as_slice()) - want).abs() < 1e-13);
        assert!(pot.psi_tilde(q.as_slice()) >= -1e-9);
    }

    #[test]
    fn gradient_vanishes_at_zero_and_at_uniaxial_minimum() {
        for (params, dim) in [
            (BulkParams::planar(), Dim::Two),
            (BulkParams::spatial(), Dim::Three),
        ] {
            let pot = BulkPotential::new(params, dim).unwrap();
            let n = dim.ncoef();
            let mut g = [0.0; 5];
            pot.psi_grad(&[0.0; 5][..n], &mut g[..n]);
            assert!(g[..n].iter().all(|x| *x == 0.0));
        }
        let p = BulkParams::planar();
        assert!((p.uniaxial_order(Dim::Two) - 0.7).abs() < 1e-10);
        let p3 = BulkParams::spatial();
        assert!((p3.uniaxial_order(Dim::Three) - 0.700005531).abs() < 1e-8);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        for (params, dim) in [
            (BulkParams::planar(), Dim::Two),
            (BulkParams::spatial(), Dim::Three),
        ] {
            let pot = BulkPotential::new(params, dim).unwrap();
            let n = dim.ncoef();
            let mut seed = 11;
            for trial in 0..100 {
                // Cover the plain well, the cutoff band, and the quadratic tail.
                let radius = [0.6, 1.2, 1.6][trial % 3];
                let mut c = [0.0; 5];
                for x in c[..n].iter_mut() {
                    *x = lcg(&mut seed);
                }
                let nrm = c[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in c[..n].iter_mut() {
                    *x *= radius / nrm;
                }
                let mut g = [0.0; 5];
                let mut h = [0.0; 25];
                pot.psi_grad_hess(&c[..n], &mut g[..n], &mut h[..n * n]);
                let eps = 1e-6;
                for i in 0..n {
                    let mut cp = c;
                    let mut cm = c;
                    cp[i] += eps;
                    cm[i] -= eps;
                    let fd = (pot.psi(&cp[..n]) - pot.psi(&cm[..n])) / (2.0 * eps);
                    let scale = g[i].abs().max(1.0);
                    assert!(
                        (fd - g[i]).abs() / scale < 1e-6,
                        "grad {i}: {fd} vs {}",
                        g[i]
                    );
                    let mut gp = [0.0; 5];
                    let mut gm = [0.0; 5];
                    pot.psi_grad(&cp[..n], &mut gp[..n]);
                    pot.psi_grad(&cm[..n], &mut gm[..n]);
                    for j in 0..n {
                        let fd = (gp[j] - gm[j]) / (2.0 * eps);
                        let hv = h[j * n + i];
                        let scale = hv.abs().max(1.0);
                        assert!((fd - hv).abs() / scale < 1e-5, "hess {j}{i}: {fd} vs {hv}");
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        assert!(
                            (h[i * n + j] - h[j * n + i]).abs()
                                <= 1e-12 * h[i * n + j].abs().max(1.0)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn modified_potential_agrees_below_b1() {
        let pot = BulkPotential::new(BulkParams::spatial(), Dim::Three).unwrap();
        let mut seed = 3;
        for _ in 0..200 {
            let mut c = [0.0; 5];
            for x in c.iter_mut() {
                *x = 0.44 * lcg(&mut seed);
            }
            assert!(c.iter().map(|x| x * x).sum::<f64>() < 1.0);
            assert_eq!(pot.psi(&c), pot.psi_tilde(&c));
        }
    }

    #[test]
    fn convex_split_identity_and_monotonicity() {
        for (params, dim) in [
            (BulkParams::planar(), Dim::Two),
            (BulkParams::spatial(), Dim::Three),
        ] {
            let pot = BulkPotential::new(params, dim).unwrap();
            let n = dim.ncoef();
            let d2 = pot.stabilization();
            let zero = [0.0; 5];
            assert_eq!(pot.convex_split(&zero[..n]), (params.a0, 0.0));
            let mut seed = 99;
            for _ in 0..1000 {
                let mut a = [0.0; 5];
                let mut b = [0.0; 5];
                for i in 0..n {
                    a[i] = 1.2 * lcg(&mut seed);
                    b[i] = 1.2 * lcg(&mut seed);
                }
                let (pc, pe) = pot.convex_split(&a[..n]);
                assert!((pc - pe - pot.psi(&a[..n])).abs() <= 1e-12 * pc.abs().max(1.0));
                let r: f64 = a[..n].iter().map(|x| x * x).sum();
                assert!(pc >= params.a0 + 0.25 * d2 * r - 1e-12 * pc.abs());
                let mut ga = [0.0; 5];
                let mut gb = [0.0; 5];
                pot.convex_grad(&a[..n], &mut ga[..n]);
                pot.convex_grad(&b[..n], &mut gb[..n]);
                let mono: f64 = (0..n).map(|i| (ga[i] - gb[i]) * (a[i] - b[i])).sum();
                assert!(mono >= 0.0);
            }
        }
    }

    #[test]
    fn uniaxial_properties() {
        let b2 = Basis::new(Dim::Two);
        assert_eq!(
            b2.uniaxial(0.0, &[1.0, 0.0]).unwrap(),
            QCoeffs::zeros(Dim::Two)
        );
        let q = b2.uniaxial(0.7, &[0.6, 0.8]).unwrap();
        assert!((q.norm_sq() - 0.245).abs() < 1e-15);
        assert_eq!(q, b2.uniaxial(0.7, &[-0.6, -0.8]).unwrap());
        assert!(matches!(
            b2.uniaxial(0.7, &[1.0, 1.0]),
            Err(Error::Precondition(_))
        ));
        let b3 = Basis::new(Dim::Three);
        let n = [2.0 / 7.0, 3.0 / 7.0, 6.0 / 7.0];
        let q3 = b3.uniaxial(0.5, &n).unwrap();
        assert!((q3.norm_sq() - 0.25 * 2.0 / 3.0).abs() < 1e-15);
        let (lam, v) = b3.eig_max(&q3);
        assert!((lam - 2.0 * 0.5 / 3.0).abs() < 1e-13);
        for k in 0..3 {
            assert!((v[k] - n[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn eig_max_planar_and_degenerate() {
        let b2 = Basis::new(Dim::Two);
        let q = b2.uniaxial(0.7, &[1.0, 0.0]).unwrap();
        let (lam, v) = b2.eig_max(&q);
        assert!((lam - 0.35).abs() < 1e-15);
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
        assert_eq!(
            b2.eig_max(&QCoeffs::zeros(Dim::Two)),
            (0.0, [1.0, 0.0, 0.0])
        );
        // Oblate uniaxial: repeated top eigenvalue.
        let b3 = Basis::new(Dim::Three);
        let q = b3.uniaxial(-0.6, &[0.0, 0.0, 1.0]).unwrap();
        let (lam, v) = b3.eig_max(&q);
        assert!((lam - 0.2).abs() < 1e-13);
        assert!(v[2].abs() < 1e-10);
        assert!((norm3(&v) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn biaxiality_range() {
        let b3 = Basis::new(Dim::Three);
        assert_eq!(b3.biaxiality(&QCoeffs::zeros(Dim::Three)), 0.0);
        let q = b3.uniaxial(0.3, &[0.0, 0.6, 0.8]).unwrap();
        assert!(b3.biaxiality(&q).abs() < 1e-12);
        let mut seed = 5;
        for _ in 0..1000 {
            let mut c = [0.0; 5];
            for x in c.iter_mut() {
                *x = lcg(&mut seed);
            }
            let beta = b3.biaxiality_coeffs(&c);
            assert!((-1e-12..=1.0 + 1e-12).contains(&beta));
        }
    }
}
