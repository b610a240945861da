//! Implicit Euler time stepping of the discrete gradient flow, with a damped
//! Newton solve per step.

use std::borrow::Cow;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::ControlSet;
use crate::error::{Error, Result};
use crate::fem::Discretization;
use crate::linalg::{self, axpy, norm, BlockCsr, CsrMatrix, SolveStop};

/// Mass shifts tried before a Newton direction is declared unavailable.
const MAX_SHIFTS: usize = 30;

/// Step doublings tried after a full shifted Newton step.
const MAX_EXTENSIONS: usize = 6;

/// Physical and time-discretization parameters of the state equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Nematic correlation length; scales the bulk term by `1 / eta_dw^2`.
    pub eta_dw: f64,
    /// Weak anchoring strength on the boundary.
    pub eta_gamma: f64,
    /// Coefficient of the distributed control.
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.eta_dw, self.eta_gamma, self.lambda, self.dt]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        if self.eta_dw <= 0.0 {
            return Err(Error::Config(format!(
                "eta_dw must be positive, got {}",
                self.eta_dw
            )));
        }
        if self.eta_gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config(
                "eta_gamma and lambda must be non-negative".into(),
            ));
        }
        if self.dt <= 0.0 {
            return Err(Error::Precondition(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("at least one time step is required".into()));
        }
        Ok(())
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// Trapezoid weight of time level `k`.
    pub fn time_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Number of steps for a final time, requiring `dt` to divide `t_final`.
pub fn steps_for(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(Error::Config(format!(
            "dt ({dt}) and t_final ({t_final}) must be positive"
        )));
    }
    let k = (t_final / dt).round();
    if k < 1.0 || (k * dt - t_final).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "dt = {dt} does not divide t_final = {t_final}"
        )));
    }
    Ok(k as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Newton stops when `|F| <= newton_rtol * (1 + |F(Q^k)|)`.
    pub newton_rtol: f64,
    pub newton_max_iter: usize,
    /// Step halvings allowed when a Newton update increases `|F|`.
    pub max_halvings: usize,
    pub cg_rtol: f64,
    /// CG iteration cap as a multiple of the vertex count.
    pub cg_max_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_rtol: 1e-10,
            newton_max_iter: 25,
            max_halvings: 8,
            cg_rtol: 1e-10,
            cg_max_factor: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    /// Newton iterations per time step.
    pub iterations: Vec<usize>,
    /// Final residual norm per time step.
    pub residuals: Vec<f64>,
    /// Total CG iterations per time step.
    pub linear_iterations: Vec<usize>,
}

impl NewtonReport {
    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"QTCKPT01";

#[derive(Clone, Debug)]
enum Storage {
    Memory(Vec<Vec<f64>>),
    Disk {
        dir: PathBuf,
        len: usize,
        count: usize,
    },
}

/// States `Q^0 .. Q^K`, kept in memory or in a checkpoint directory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dt: f64,
    dim: usize,
    n_vertices: usize,
    storage: Storage,
}

impl Trajectory {
    pub fn from_states(dt: f64, dim: usize, n_vertices: usize, states: Vec<Vec<f64>>) -> Self {
        Trajectory {
            dt,
            dim,
            n_vertices,
            storage: Storage::Memory(states),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of stored states, `K + 1`.
    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Memory(s) => s.len(),
            Storage::Disk { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.n_steps() as f64
    }

    pub fn is_checkpointed(&self) -> bool {
        matches!(self.storage, Storage::Disk { .. })
    }

    pub fn state(&self, k: usize) -> Result<Cow<'_, [f64]>> {
        if k >= self.len() {
            return Err(Error::Precondition(format!(
                "state {k} out of range 0..{}",
                self.len()
            )));
        }
        match &self.storage {
            Storage::Memory(s) => Ok(Cow::Borrowed(&s[k])),
            Storage::Disk { dir, len, .. } => {
                let data = read_checkpoint(&checkpoint_path(dir, k), self.dim, self.n_vertices, k)?;
                if data.len() != *len {
                    return Err(Error::Input(format!(
                        "checkpoint {k} has {} values, expected {len}",
                        data.len()
                    )));
                }
                Ok(Cow::Owned(data))
            }
        }
    }

    pub fn final_state(&self) -> Result<Cow<'_, [f64]>> {
        self.state(self.n_steps())
    }

    /// Loads every state into memory.
    pub fn to_vec(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.len())
            .map(|k| self.state(k).map(Cow::into_owned))
            .collect()
    }
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("state_{step:06}.bin"))
}

/// Writes a state file: 32-byte header (magic, dim, vertex count, step as
/// little-endian `u64`) followed by little-endian `f64` values.
pub fn write_checkpoint(
    path: &Path,
    dim: usize,
    n_vertices: usize,
    step: usize,
    data: &[f64],
) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 8 * data.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for h in [dim, n_vertices, step] {
        buf.extend_from_slice(&(h as u64).to_le_bytes());
    }
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    crate::output::write_atomic(path, &buf)
}

pub fn read_checkpoint(
    path: &Path,
    dim: usize,
    n_vertices: usize,
    step: usize,
) -> Result<Vec<f64>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() < 32 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Input(format!(
            "{} is not a state checkpoint",
            path.display()
        )));
    }
    let header = |i: usize| u64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    if header(1) != dim || header(2) != n_vertices || header(3) != step {
        return Err(Error::Input(format!(
            "checkpoint {} header (dim {}, vertices {}, step {}) does not match (dim {dim}, vertices {n_vertices}, step {step})",
            path.display(),
            header(1),
            header(2),
            header(3)
        )));
    }
    let body = &buf[32..];
    if body.len() % 8 != 0 {
        return Err(Error::Input(format!(
            "checkpoint {} is truncated",
            path.display()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// The discrete state equation: a discretization plus model and solver
/// parameters.
#[derive(Clone, Debug)]
pub struct Model {
    disc: Arc<Discretization>,
    params: ModelParams,
    solver: SolverOptions,
    checkpoint_dir: Option<PathBuf>,
    linear: CsrMatrix,
    linear_block: BlockCsr,
}

impl Model {
    pub fn new(disc: Arc<Discretization>, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let ops = disc.ops();
        // M / dt + K + eta_gamma B
        let linear = ops
            .mass()
            .combine(1.0 / params.dt, ops.stiffness(), 1.0)
            .combine(1.0, ops.boundary_mass(), params.eta_gamma);
        let linear_block = BlockCsr::from_scalar(&linear, disc.ncoef());
        Ok(Model {
            disc,
            params,
            solver: SolverOptions::default(),
            checkpoint_dir: None,
            linear,
            linear_block,
        })
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    /// Stream states to `dir` instead of keeping them in memory.
    pub fn with_checkpoint_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.checkpoint_dir = dir;
        self
    }

    pub fn disc(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn solver(&self) -> &SolverOptions {
        &self.solver
    }

    pub fn state_len(&self) -> usize {
        self.disc.state_len()
    }

    fn bulk_scale(&self) -> f64 {
        1.0 / (self.params.eta_dw * self.params.eta_dw)
    }

    /// Right-hand side contributions of the controls at one time level:
    /// `eta_gamma C_Γ u_Γ + lambda C_Ω u_Ω`.
    pub fn control_load(&self, ctrl: &ControlSet, level: usize) -> Vec<f64> {
        let ops = self.disc.ops();
        let n = self.disc.ncoef();
        let mut f = ops.boundary_coupling().apply_vec(&ctrl.boundary, n);
        for x in f.iter_mut() {
            *x *= self.params.eta_gamma;
        }
        if let Some(dom) = ctrl.domain.as_ref() {
            if self.params.lambda != 0.0 {
                let g = ops.domain_coupling().apply_vec(&dom[level], n);
                axpy(self.params.lambda, &g, &mut f);
            }
        }
        f
    }

    /// `F(Q) = (M/dt + K + eta_gamma B) Q + N(Q) / eta_dw^2 - rhs`.
    pub fn residual(&self, q: &[f64], rhs: &[f64]) -> Vec<f64> {
        let n = self.disc.ncoef();
        let mut f = self.linear.apply_vec(q, n);
        let mut load = vec![0.0; q.len()];
        self.disc.bulk_load(q, &mut load);
        axpy(self.bulk_scale(), &load, &mut f);
        axpy(-1.0, rhs, &mut f);
        f
    }

    /// Step Jacobian `M/dt + K + eta_gamma B + H(Q) / eta_dw^2`.
    pub fn jacobian(&self, q: &[f64]) -> BlockCsr {
        let mut jac = self.linear_block.clone();
        self.disc
            .add_bulk_hessian(q, self.bulk_scale(), &mut jac, None);
        jac
    }

    /// Jacobian and residual at `q` in one assembly pass.
    pub fn residual_jacobian(&self, q: &[f64], rhs: &[f64]) -> (Vec<f64>, BlockCsr) {
        let n = self.disc.ncoef();
        let mut jac = self.linear_block.clone();
        let mut load = vec![0.0; q.len()];
        self.disc
            .add_bulk_hessian(q, self.bulk_scale(), &mut jac, Some(&mut load));
        let mut f = self.linear.apply_vec(q, n);
        axpy(self.bulk_scale(), &load, &mut f);
        axpy(-1.0, rhs, &mut f);
        (f, jac)
    }

    /// Solve `jac x = b` with the configured CG settings, falling back to
    /// MINRES when `jac` turns out to be indefinite.
    pub fn solve_linear(&self, jac: &BlockCsr, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        let mut x = vec![0.0; b.len()];
        let max_iter = self.cg_max_iter();
        let rep = linalg::pcg_run(jac, b, &mut x, self.solver.cg_rtol, max_iter);
        match rep.stop {
            SolveStop::Converged => Ok((x, rep.iterations)),
            SolveStop::NegativeCurvature => {
                x.fill(0.0);
                let m = linalg::minres(jac, b, &mut x, self.solver.cg_rtol, max_iter)?;
                Ok((x, rep.iterations + m.iterations))
            }
            SolveStop::MaxIterations => Err(Error::LinearSolve {
                step: None,
                iterations: rep.iterations,
                relative_residual: rep.relative_residual,
            }),
        }
    }

    fn cg_max_iter(&self) -> usize {
        self.solver.cg_max_factor * self.disc.mesh().n_vertices()
    }

    /// Fixed part of the step residual: `M Q^k / dt + control load`.
    pub fn step_rhs(&self, q_old: &[f64], ctrl: &ControlSet, level: usize) -> Vec<f64> {
        let n = self.disc.ncoef();
        let mut rhs = self.disc.ops().mass().apply_vec(q_old, n);
        for x in rhs.iter_mut() {
            *x /= self.params.dt;
        }
        axpy(1.0, &self.control_load(ctrl, level), &mut rhs);
        rhs
    }

    /// Step functional whose gradient is the step residual:
    /// `1/2 Q^T (M/dt + K + eta_gamma B) Q + (1/eta_dw^2) int psi(Q) - rhs^T Q`.
    pub fn step_energy(&self, q: &[f64], rhs: &[f64]) -> f64 {
        let n = self.disc.ncoef();
        0.5 * self.linear.inner(q, q, n) + self.bulk_scale() * self.disc.bulk_energy(q)
            - linalg::dot(rhs, q)
    }

    /// Newton direction, shifted by `shift M` until CG sees a positive
    /// definite system and the direction descends the step functional.
    fn newton_direction(
        &self,
        jac: &BlockCsr,
        f: &[f64],
        shift: &mut f64,
        level: usize,
    ) -> Result<(Vec<f64>, usize)> {
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        let base = 1.0 / self.params.dt;
        let mut cg_total = 0;
        for _ in 0..MAX_SHIFTS {
            let shifted;
            let sys = if *shift > 0.0 {
                let mut m = jac.clone();
                m.add_scalar(*shift, self.disc.ops().mass());
                shifted = m;
                &shifted
            } else {
                jac
            };
            let mut d = vec![0.0; f.len()];
            let rep = linalg::pcg_run(sys, &neg, &mut d, self.solver.cg_rtol, self.cg_max_iter());
            cg_total += rep.iterations;
            match rep.stop {
                SolveStop::Converged if linalg::dot(f, &d) < 0.0 => return Ok((d, cg_total)),
                SolveStop::MaxIterations => {
                    return Err(Error::LinearSolve {
                        step: Some(level),
                        iterations: cg_total,
                        relative_residual: rep.relative_residual,
                    })
                }
                _ => *shift = (4.0 * *shift).max(base),
            }
        }
        Err(Error::LinearSolve {
            step: Some(level),
            iterations: cg_total,
            relative_residual: f64::NAN,
        })
    }

    /// One implicit Euler step from `q_old` to time level `level`.
    /// Returns the new state, Newton iterations, final residual and CG
    /// iterations.
    ///
    /// Damped Newton on the step residual. Trial steps are accepted when
    /// they reduce either the residual norm or (Armijo) the step
    /// functional; indefinite Jacobians are shifted by a multiple of the
    /// mass matrix.
    pub fn step(
        &self,
        q_old: &[f64],
        ctrl: &ControlSet,
        level: usize,
    ) -> Result<(Vec<f64>, usize, f64, usize)> {
        let rhs = self.step_rhs(q_old, ctrl, level);
        let mut q = q_old.to_vec();
        let (mut f, mut jac) = self.residual_jacobian(&q, &rhs);
        let mut fnorm = norm(&f);
        let mut energy = self.step_energy(&q, &rhs);
        let tol = self.solver.newton_rtol * (1.0 + fnorm);
        let mut cg_total = 0;
        let mut shift = 0.0;
        for it in 0..=self.solver.newton_max_iter {
            if !fnorm.is_finite() {
                break;
            }
            if fnorm <= tol {
                return Ok((q, it, fnorm, cg_total));
            }
            if it == self.solver.newton_max_iter {
                break;
            }
            let (dq, cg_it) = self.newton_direction(&jac, &f, &mut shift, level)?;
            cg_total += cg_it;
            let slope = linalg::dot(&f, &dq);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=self.solver.max_halvings {
                let mut trial = q.clone();
                axpy(t, &dq, &mut trial);
                let ftrial = self.residual(&trial, &rhs);
                let tn = norm(&ftrial);
                let te = self.step_energy(&trial, &rhs);
                if tn.is_finite() && (tn <= fnorm || te <= energy + 1e-4 * t * slope) {
                    accepted = Some((trial, te));
                    break;
                }
                t *= 0.5;
            }
            // A shifted direction underestimates the step along negative
            // curvature, so a full shifted step is extended while the step
            // functional keeps decreasing.
            if let (Some((_, te)), true) = (&accepted, shift > 0.0 && t == 1.0) {
                let mut best = *te;
                for _ in 0..MAX_EXTENSIONS {
                    let mut trial = q.clone();
                    axpy(2.0 * t, &dq, &mut trial);
                    let e = self.step_energy(&trial, &rhs);
                    if !(e < best) {
                        break;
                    }
                    best = e;
                    t *= 2.0;
                    accepted = Some((trial, e));
                }
            }
            match accepted {
                Some((trial, te)) => {
                    q = trial;
                    energy = te;
                    shift = if t >= 1.0 { 0.25 * shift } else { shift };
                    if shift < 1e-3 / self.params.dt {
                        shift = 0.0;
                    }
                }
                None => shift = (4.0 * shift).max(1.0 / self.params.dt),
            }
            (f, jac) = self.residual_jacobian(&q, &rhs);
            fnorm = norm(&f);
        }
        Err(Error::NewtonDiverged {
            step: level,
            iterations: self.solver.newton_max_iter,
            residual: fnorm,
        })
    }

    /// Runs `K` implicit Euler steps from `q0` under the given controls.
    pub fn solve_forward(
        &self,
        q0: &[f64],
        ctrl: &ControlSet,
    ) -> Result<(Trajectory, NewtonReport)> {
        if q0.len() != self.state_len() {
            return Err(Error::Precondition(format!(
                "initial state has {} entries, expected {}",
                q0.len(),
                self.state_len()
            )));
        }
        if q0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("initial state is not finite".into()));
        }
        ctrl.check_dims(self.disc.mesh(), self.params.n_steps)?;
        let dim = self.disc.dim().get();
        let nv = self.disc.mesh().n_vertices();
        let mut report = NewtonReport::default();
        let mut states = Vec::new();
        if let Some(dir) = &self.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_checkpoint(&checkpoint_path(dir, 0), dim, nv, 0, q0)?;
        } else {
            states.push(q0.to_vec());
        }
        let mut q = q0.to_vec();
        for k in 0..self.params.n_steps {
            let (next, its, res, cg) = self.step(&q, ctrl, k + 1)?;
            report.iterations.push(its);
            report.residuals.push(res);
            report.linear_iterations.push(cg);
            q = next;
            match &self.checkpoint_dir {
                Some(dir) => write_checkpoint(&checkpoint_path(dir, k + 1), dim, nv, k + 1, &q)?,
                None => states.push(q.clone()),
            }
        }
        let storage = match &self.checkpoint_dir {
            Some(dir) => Storage::Disk {
                dir: dir.clone(),
                len: q.len(),
                count: self.params.n_steps + 1,
            },
            None => Storage::Memory(states),
        };
        let traj = Trajectory {
            dt: self.params.dt,
            dim,
            n_vertices: nv,
            storage,
        };
        Ok((traj, report))
    }

    /// Discrete free energy `1/2 Q^T K Q + (1/eta_dw^2) int psi(Q)
    /// + eta_gamma/2 |Q - u_Γ|^2_Γ - lambda (Q, u_Ω)`.
    pub fn energy(&self, q: &[f64], ctrl: &ControlSet, level: usize) -> f64 {
        let ops = self.disc.ops();
        let n = self.disc.ncoef();
        let mut e =
            0.5 * ops.stiffness().inner(q, q, n) + self.bulk_scale() * self.disc.bulk_energy(q);
        if self.params.eta_gamma != 0.0 {
            let cu = ops.boundary_coupling().apply_vec(&ctrl.boundary, n);
            let anchoring = ops.boundary_mass().inner(q, q, n) - 2.0 * linalg::dot(q, &cu)
                + crate::fem::Operators::p0_inner(
                    ops.face_mass(),
                    &ctrl.boundary,
                    &ctrl.boundary,
                    n,
                );
            e += 0.5 * self.params.eta_gamma * anchoring;
        }
        if let Some(dom) = ctrl.domain.as_ref() {
            if self.params.lambda != 0.0 {
                let cu = ops.domain_coupling().apply_vec(&dom[level], n);
                e -= self.params.lambda * linalg::dot(q, &cu);
            }
        }
        e
    }
}
