//! Sparse matrices over P1 vertex patterns and diagonally preconditioned
//! CG and MINRES solvers.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Compressed sparse row pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Build from per-row column lists (sorted and deduplicated here).
    pub fn from_rows(ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            debug_assert!(row.iter().all(|&c| c < ncols));
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        SparsityPattern {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Position of `(r, c)` in the value array.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row(r);
        self.col_idx[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| range.start + k)
    }
}

/// Scalar CSR matrix. Applied to tensor fields channel by channel: entity
/// `v`, coefficient `i` lives at `v * ncoef + i`.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        CsrMatrix { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        let k = self
            .pattern
            .position(r, c)
            .unwrap_or_else(|| panic!("entry ({r}, {c}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.position(r, c).map_or(0.0, |k| self.values[k])
    }

    /// `alpha * self + beta * other` on a shared pattern.
    pub fn combine(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        CsrMatrix {
            pattern: self.pattern.clone(),
            values,
        }
    }

    /// `y = A x` applied per coefficient channel.
    pub fn apply(&self, x: &[f64], ncoef: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols() * ncoef);
        debug_assert_eq!(y.len(), self.nrows() * ncoef);
        let p = &*self.pattern;
        for r in 0..p.nrows {
            let yr = &mut y[r * ncoef..(r + 1) * ncoef];
            yr.fill(0.0);
            for k in p.row(r) {
                let a = self.values[k];
                let c = p.col_idx[k];
                for (yi, xi) in yr.iter_mut().zip(&x[c * ncoef..(c + 1) * ncoef]) {
                    *yi += a * xi;
                }
            }
        }
    }

    pub fn apply_vec(&self, x: &[f64], ncoef: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows() * ncoef];
        self.apply(x, ncoef, &mut y);
        y
    }

    /// `y = A^T x` applied per coefficient channel.
    pub fn apply_transpose(&self, x: &[f64], ncoef: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows() * ncoef);
        debug_assert_eq!(y.len(), self.ncols() * ncoef);
        y.fill(0.0);
        let p = &*self.pattern;
        for r in 0..p.nrows {
            let xr = &x[r * ncoef..(r + 1) * ncoef];
            for k in p.row(r) {
                let a = self.values[k];
                let c = p.col_idx[k];
                for (yi, xi) in y[c * ncoef..(c + 1) * ncoef].iter_mut().zip(xr) {
                    *yi += a * xi;
                }
            }
        }
    }

    pub fn apply_transpose_vec(&self, x: &[f64], ncoef: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols() * ncoef];
        self.apply_transpose(x, ncoef, &mut y);
        y
    }

    /// `x^T (A (x) I) y`.
    pub fn inner(&self, x: &[f64], y: &[f64], ncoef: usize) -> f64 {
        let ay = self.apply_vec(y, ncoef);
        dot(x, &ay)
    }

    /// Maximum of `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let p = &*self.pattern;
        let mut worst = 0.0f64;
        for r in 0..p.nrows {
            for k in p.row(r) {
                let c = p.col_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// Block CSR matrix with dense `bs x bs` blocks on a scalar pattern. Used
/// for Newton Jacobians, where the bulk Hessian couples coefficient channels
/// within each vertex pair.
#[derive(Clone, Debug)]
pub struct BlockCsr {
    pattern: Arc<SparsityPattern>,
    bs: usize,
    values: Vec<f64>,
}

impl BlockCsr {
    pub fn zeros(pattern: Arc<SparsityPattern>, bs: usize) -> Self {
        let values = vec![0.0; pattern.nnz() * bs * bs];
        BlockCsr {
            pattern,
            bs,
            values,
        }
    }

    /// `A (x) I_bs`.
    pub fn from_scalar(a: &CsrMatrix, bs: usize) -> Self {
        let mut m = Self::zeros(a.pattern.clone(), bs);
        for (k, &v) in a.values.iter().enumerate() {
            for i in 0..bs {
                m.values[(k * bs + i) * bs + i] = v;
            }
        }
        m
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.nrows * self.bs
    }

    /// Mutable view of block number `k` (row-major `bs x bs`).
    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let b2 = self.bs * self.bs;
        &mut self.values[k * b2..(k + 1) * b2]
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let b2 = self.bs * self.bs;
        &self.values[k * b2..(k + 1) * b2]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let bs = self.bs;
        let b2 = bs * bs;
        let p = &*self.pattern;
        for r in 0..p.nrows {
            let yr = &mut y[r * bs..(r + 1) * bs];
            yr.fill(0.0);
            for k in p.row(r) {
                let c = p.col_idx[k];
                let xc = &x[c * bs..(c + 1) * bs];
                let blk = &self.values[k * b2..(k + 1) * b2];
                for i in 0..bs {
                    let row = &blk[i * bs..(i + 1) * bs];
                    yr[i] += row.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// `self += alpha * (a (x) I_bs)` for `a` on the same pattern.
    pub fn add_scalar(&mut self, alpha: f64, a: &CsrMatrix) {
        assert!(
            Arc::ptr_eq(&self.pattern, &a.pattern) || *self.pattern == *a.pattern,
            "pattern mismatch"
        );
        let bs = self.bs;
        for (k, &v) in a.values.iter().enumerate() {
            for i in 0..bs {
                self.values[(k * bs + i) * bs + i] += alpha * v;
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let bs = self.bs;
        let mut d = vec![0.0; self.dim()];
        for r in 0..self.pattern.nrows {
            let k = self
                .pattern
                .position(r, r)
                .expect("diagonal entry in pattern");
            let blk = self.block(k);
            for i in 0..bs {
                d[r * bs + i] = blk[i * bs + i];
            }
        }
        d
    }
}

/// Why an iterative solve stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStop {
    Converged,
    /// CG met `p^T A p <= 0`; the matrix is not positive definite.
    NegativeCurvature,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub stop: SolveStop,
}

impl CgReport {
    fn into_result(self) -> Result<CgReport> {
        match self.stop {
            SolveStop::Converged => Ok(self),
            _ => Err(Error::LinearSolve {
                step: None,
                iterations: self.iterations,
                relative_residual: self.relative_residual,
            }),
        }
    }
}

fn inverse_abs_diagonal(a: &BlockCsr) -> Vec<f64> {
    a.diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d.abs() } else { 1.0 })
        .collect()
}

/// Solve `A x = b` with Jacobi-preconditioned CG, starting from `x`.
/// Stops when `|b - A x| <= tol |b|`.
pub fn pcg(a: &BlockCsr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<CgReport> {
    pcg_run(a, b, x, tol, max_iter).into_result()
}

/// As [`pcg`], reporting negative curvature and iteration exhaustion in the
/// returned [`CgReport::stop`] instead of as an error.
pub fn pcg_run(a: &BlockCsr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgReport {
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return CgReport {
            iterations: 0,
            relative_residual: 0.0,
            stop: SolveStop::Converged,
        };
    }
    let inv_diag = inverse_abs_diagonal(a);
    let mut r = a.apply_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    let mut stop = SolveStop::MaxIterations;
    while it < max_iter {
        if rel <= tol {
            break;
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            stop = SolveStop::NegativeCurvature;
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm(&r) / bnorm;
        it += 1;
    }
    if rel <= tol {
        stop = SolveStop::Converged;
    }
    CgReport {
        iterations: it,
        relative_residual: rel,
        stop,
    }
}

/// Solve a symmetric, possibly indefinite `A x = b` with MINRES
/// preconditioned by `|diag A|`, starting from `x`. Stops when
/// `|b - A x| <= tol |b|`.
pub fn minres(
    a: &BlockCsr,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
            stop: SolveStop::Converged,
        });
    }
    let inv_diag = inverse_abs_diagonal(a);
    let true_residual = |x: &[f64]| {
        let ax = a.apply_vec(x);
        b.iter()
            .zip(&ax)
            .map(|(b, ax)| b - ax)
            .collect::<Vec<f64>>()
    };
    let mut total = 0;
    let mut r1 = true_residual(x);
    let mut rel = norm(&r1) / bnorm;
    // Restart from the current iterate whenever the recursive residual
    // estimate has converged but the true residual has not.
    while rel > tol && total < max_iter {
        let mut y: Vec<f64> = r1.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let beta1 = dot(&r1, &y).sqrt();
        let mut r2 = r1.clone();
        let (mut oldb, mut beta) = (0.0, beta1);
        let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
        let (mut cs, mut sn) = (-1.0f64, 0.0f64);
        let mut w = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut it = 0;
        while total < max_iter {
            let s = 1.0 / beta;
            for i in 0..n {
                v[i] = s * y[i];
            }
            a.apply(&v, &mut y);
            if it > 0 {
                axpy(-beta / oldb, &r1, &mut y);
            }
            let alfa = dot(&v, &y);
            axpy(-alfa / beta, &r2, &mut y);
            std::mem::swap(&mut r1, &mut r2);
            r2.copy_from_slice(&y);
            for i in 0..n {
                y[i] = r2[i] * inv_diag[i];
            }
            oldb = beta;
            beta = dot(&r2, &y).max(0.0).sqrt();
            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = gbar.hypot(beta).max(f64::EPSILON);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi = cs * phibar;
            phibar *= sn;
            for i in 0..n {
                let w1 = w2[i];
                w2[i] = w[i];
                w[i] = (v[i] - oldeps * w1 - delta * w2[i]) / gamma;
                x[i] += phi * w[i];
            }
            it += 1;
            total += 1;
            if phibar <= 0.1 * tol * beta1 || beta == 0.0 {
                break;
            }
        }
        r1 = true_residual(x);
        let new_rel = norm(&r1) / bnorm;
        if !(new_rel < rel) && new_rel > tol {
            rel = new_rel;
            break;
        }
        rel = new_rel;
    }
    CgReport {
        iterations: total,
        relative_residual: rel,
        stop: if rel <= tol {
            SolveStop::Converged
        } else {
            SolveStop::MaxIterations
        },
    }
    .into_result()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
