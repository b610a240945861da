//! Controls, the discrete objective, reduced gradients and projected
//! gradient descent.

use serde::{Deserialize, Serialize};

use crate::adjoint::{solve_adjoint, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::fem::Operators;
use crate::forward::{Model, NewtonReport, Trajectory};
use crate::mesh::Mesh;

/// Time-independent P0 boundary control and optional time-dependent P0
/// distributed control (one cell field per time level `0..=K`).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    pub boundary: Vec<f64>,
    pub domain: Option<Vec<Vec<f64>>>,
}

impl ControlSet {
    pub fn boundary_only(boundary: Vec<f64>) -> Self {
        ControlSet {
            boundary,
            domain: None,
        }
    }

    pub fn zeros(mesh: &Mesh, n_steps: usize, with_domain: bool) -> Self {
        let dofs = mesh.dofs();
        ControlSet {
            boundary: vec![0.0; dofs.boundary_control_len()],
            domain: with_domain.then(|| vec![vec![0.0; dofs.domain_control_len()]; n_steps + 1]),
        }
    }

    pub fn check_dims(&self, mesh: &Mesh, n_steps: usize) -> Result<()> {
        let dofs = mesh.dofs();
        if self.boundary.len() != dofs.boundary_control_len() {
            return Err(Error::Precondition(format!(
                "boundary control has {} entries, expected {}",
                self.boundary.len(),
                dofs.boundary_control_len()
            )));
        }
        if let Some(dom) = &self.domain {
            if dom.len() != n_steps + 1 || dom.iter().any(|u| u.len() != dofs.domain_control_len())
            {
                return Err(Error::Precondition(format!(
                    "domain control must have {} levels of {} entries",
                    n_steps + 1,
                    dofs.domain_control_len()
                )));
            }
        }
        if !self.iter().all(f64::is_finite) {
            return Err(Error::Input("control is not finite".into()));
        }
        Ok(())
    }

    fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.boundary
            .iter()
            .chain(self.domain.iter().flatten().flatten())
            .copied()
    }

    /// `self + t * other`.
    pub fn add_scaled(&self, t: f64, other: &ControlSet) -> ControlSet {
        let boundary = self
            .boundary
            .iter()
            .zip(&other.boundary)
            .map(|(a, b)| a + t * b)
            .collect();
        let domain = match (&self.domain, &other.domain) {
            (Some(a), Some(b)) => Some(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + t * q).collect())
                    .collect(),
            ),
            (a, _) => a.clone(),
        };
        ControlSet { boundary, domain }
    }
}

/// Pointwise Frobenius bound on a P0 field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Uniform(f64),
    PerEntity(Vec<f64>),
}

impl Bound {
    pub fn at(&self, e: usize) -> f64 {
        match self {
            Bound::Uniform(b) => *b,
            Bound::PerEntity(v) => v[e],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub boundary: Bound,
    pub domain: Bound,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            boundary: Bound::Uniform(1.0),
            domain: Bound::Uniform(1.0),
        }
    }
}

/// A P1 target that is either fixed in time or given per time level.
#[derive(Clone, Debug, PartialEq)]
pub enum TimeField {
    Constant(Vec<f64>),
    PerLevel(Vec<Vec<f64>>),
}

impl TimeField {
    pub fn at(&self, k: usize) -> &[f64] {
        match self {
            TimeField::Constant(f) => f,
            TimeField::PerLevel(fs) => &fs[k],
        }
    }
}

/// Tracking targets as P1 fields. Only boundary values of `boundary` enter
/// the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub domain: TimeField,
    pub boundary: Vec<f64>,
    pub final_state: Vec<f64>,
}

impl Targets {
    pub fn check_dims(&self, state_len: usize, n_steps: usize) -> Result<()> {
        let ok_domain = match &self.domain {
            TimeField::Constant(f) => f.len() == state_len,
            TimeField::PerLevel(fs) => {
                fs.len() == n_steps + 1 && fs.iter().all(|f| f.len() == state_len)
            }
        };
        if !ok_domain || self.boundary.len() != state_len || self.final_state.len() != state_len {
            return Err(Error::Precondition(format!(
                "targets must be P1 fields of length {state_len}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub beta_domain: f64,
    pub beta_boundary: f64,
    pub beta_final: f64,
    pub alpha_domain: f64,
    pub alpha_boundary: f64,
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_domain,
            self.beta_boundary,
            self.beta_final,
            self.alpha_domain,
            self.alpha_boundary,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "objective weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stop when the residual falls below `rtol * (1 + initial residual)`.
    pub rtol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    pub initial_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 200,
            rtol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_halvings: 30,
            initial_step: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
    pub line_search_trials: usize,
    pub newton_iterations: usize,
    pub max_newton_residual: f64,
    /// Fraction of boundary faces where the bound is attained.
    pub active_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub control: ControlSet,
    pub objective: f64,
    pub residual: f64,
    pub status: OptimizerStatus,
    pub history: Vec<IterationRecord>,
    pub trajectory: Trajectory,
}

/// State, objective and Newton statistics for one control.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    pub trajectory: Trajectory,
    pub report: NewtonReport,
}

/// A complete optimal control problem on a fixed discretization.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: Model,
    pub initial_state: Vec<f64>,
    pub targets: Targets,
    pub weights: Weights,
    pub bounds: Bounds,
}

impl Problem {
    pub fn new(
        model: Model,
        initial_state: Vec<f64>,
        targets: Targets,
        weights: Weights,
        bounds: Bounds,
    ) -> Result<Self> {
        weights.validate()?;
        targets.check_dims(model.state_len(), model.params().n_steps)?;
        if initial_state.len() != model.state_len() {
            return Err(Error::Precondition(
                "initial state has the wrong length".into(),
            ));
        }
        Ok(Problem {
            model,
            initial_state,
            targets,
            weights,
            bounds,
        })
    }

    fn ops(&self) -> &Operators {
        self.model.disc().ops()
    }

    fn ncoef(&self) -> usize {
        self.model.disc().ncoef()
    }

    /// Control inner product: P0 boundary mass for `u_Γ`, trapezoid-in-time
    /// P0 cell mass for `u_Ω`.
    pub fn inner(&self, a: &ControlSet, b: &ControlSet) -> f64 {
        let n = self.ncoef();
        let ops = self.ops();
        let mut s = Operators::p0_inner(ops.face_mass(), &a.boundary, &b.boundary, n);
        if let (Some(da), Some(db)) = (&a.domain, &b.domain) {
            for (k, (x, y)) in da.iter().zip(db).enumerate() {
                s += self.model.params().time_weight(k)
                    * Operators::p0_inner(ops.cell_mass(), x, y, n);
            }
        }
        s
    }

    pub fn norm(&self, a: &ControlSet) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Discrete objective for a computed trajectory.
    pub fn objective(&self, traj: &Trajectory, ctrl: &ControlSet) -> Result<f64> {
        let n = self.ncoef();
        let ops = self.ops();
        let p = self.model.params();
        let w = &self.weights;
        let mut j = 0.0;
        for k in 0..=p.n_steps {
            let q = traj.state(k)?;
            let wk = p.time_weight(k);
            if w.beta_domain != 0.0 {
                let e: Vec<f64> = q
                    .iter()
                    .zip(self.targets.domain.at(k))
                    .map(|(a, b)| a - b)
                    .collect();
                j += 0.5 * w.beta_domain * wk * ops.mass().inner(&e, &e, n);
            }
            if w.beta_boundary != 0.0 {
                let e: Vec<f64> = q
                    .iter()
                    .zip(&self.targets.boundary)
                    .map(|(a, b)| a - b)
                    .collect();
                j += 0.5 * w.beta_boundary * wk * ops.boundary_mass().inner(&e, &e, n);
            }
            if k == p.n_steps && w.beta_final != 0.0 {
                let e: Vec<f64> = q
                    .iter()
                    .zip(&self.targets.final_state)
                    .map(|(a, b)| a - b)
                    .collect();
                j += 0.5 * w.beta_final * ops.mass().inner(&e, &e, n);
            }
        }
        if let Some(dom) = &ctrl.domain {
            for (k, u) in dom.iter().enumerate() {
                j += 0.5
                    * w.alpha_domain
                    * p.time_weight(k)
                    * Operators::p0_inner(ops.cell_mass(), u, u, n);
            }
        }
        j += 0.5
            * w.alpha_boundary
            * p.final_time()
            * Operators::p0_inner(ops.face_mass(), &ctrl.boundary, &ctrl.boundary, n);
        Ok(j)
    }

    pub fn evaluate(&self, ctrl: &ControlSet) -> Result<Evaluation> {
        let (trajectory, report) = self.model.solve_forward(&self.initial_state, ctrl)?;
        let objective = self.objective(&trajectory, ctrl)?;
        Ok(Evaluation {
            objective,
            trajectory,
            report,
        })
    }

    pub fn adjoint(&self, traj: &Trajectory) -> Result<AdjointTrajectory> {
        solve_adjoint(&self.model, traj, &self.targets, &self.weights)
    }

    /// Riesz representative of the reduced derivative in the control inner
    /// product.
    pub fn reduced_gradient(&self, adj: &AdjointTrajectory, ctrl: &ControlSet) -> ControlSet {
        let n = self.ncoef();
        let ops = self.ops();
        let p = self.model.params();
        let dt = p.dt;
        let mut rsum = vec![0.0; adj.states[0].len()];
        for r in &adj.states[1..] {
            crate::linalg::axpy(1.0, r, &mut rsum);
        }
        let mut boundary = ops.boundary_coupling().apply_transpose_vec(&rsum, n);
        let tf = p.final_time();
        for (f, area) in ops.face_mass().iter().enumerate() {
            for i in 0..n {
                let k = f * n + i;
                boundary[k] = p.eta_gamma * dt * boundary[k] / area
                    + self.weights.alpha_boundary * tf * ctrl.boundary[k];
            }
        }
        let domain = ctrl.domain.as_ref().map(|dom| {
            dom.iter()
                .enumerate()
                .map(|(k, u)| {
                    let mut g: Vec<f64> = u.iter().map(|x| self.weights.alpha_domain * x).collect();
                    if k > 0 && p.lambda != 0.0 {
                        let c = ops.domain_coupling().apply_transpose_vec(&adj.states[k], n);
                        let s = p.lambda * dt / p.time_weight(k);
                        for (cell, vol) in ops.cell_mass().iter().enumerate() {
                            for i in 0..n {
                                g[cell * n + i] += s * c[cell * n + i] / vol;
                            }
                        }
                    }
                    g
                })
                .collect()
        });
        ControlSet { boundary, domain }
    }

    /// Pointwise projection onto the Frobenius-norm ball of each entity.
    pub fn project(&self, ctrl: &ControlSet) -> ControlSet {
        let n = self.ncoef();
        let mut out = ctrl.clone();
        project_field(&mut out.boundary, &self.bounds.boundary, n);
        if let Some(dom) = out.domain.as_mut() {
            for u in dom.iter_mut() {
                project_field(u, &self.bounds.domain, n);
            }
        }
        out
    }

    /// `|u - Π(u - g)|` in the control norm.
    pub fn residual(&self, ctrl: &ControlSet, grad: &ControlSet) -> f64 {
        let stepped = self.project(&ctrl.add_scaled(-1.0, grad));
        self.norm(&ctrl.add_scaled(-1.0, &stepped))
    }

    pub fn is_feasible(&self, ctrl: &ControlSet, slack: f64) -> bool {
        let n = self.ncoef();
        let ok = |u: &[f64], b: &Bound| {
            u.chunks(n)
                .enumerate()
                .all(|(e, c)| c.iter().map(|x| x * x).sum::<f64>().sqrt() <= b.at(e) + slack)
        };
        ok(&ctrl.boundary, &self.bounds.boundary)
            && ctrl
                .domain
                .iter()
                .flatten()
                .all(|u| ok(u, &self.bounds.domain))
    }

    /// Fraction of boundary faces with `|u_Γ| >= (1 - 1e-9) bound`.
    pub fn active_fraction(&self, ctrl: &ControlSet) -> f64 {
        let n = self.ncoef();
        let faces = ctrl.boundary.len() / n;
        let active = ctrl
            .boundary
            .chunks(n)
            .enumerate()
            .filter(|(e, c)| {
                c.iter().map(|x| x * x).sum::<f64>().sqrt()
                    >= (1.0 - 1e-9) * self.bounds.boundary.at(*e)
            })
            .count();
        active as f64 / faces.max(1) as f64
    }

    /// Projected gradient descent with Armijo backtracking along the
    /// projection arc.
    pub fn optimize(
        &self,
        init: &ControlSet,
        opts: &OptimizerOptions,
    ) -> Result<OptimizationResult> {
        self.optimize_with(init, opts, |_| {})
    }

    /// As [`Problem::optimize`], calling `observe` after every recorded
    /// iteration.
    pub fn optimize_with(
        &self,
        init: &ControlSet,
        opts: &OptimizerOptions,
        mut observe: impl FnMut(&IterationRecord),
    ) -> Result<OptimizationResult> {
        let mut u = self.project(init);
        let mut eval = self.evaluate(&u)?;
        let mut grad = self.reduced_gradient(&self.adjoint(&eval.trajectory)?, &u);
        let mut residual = self.residual(&u, &grad);
        let tol = opts.rtol * (1.0 + residual);
        let mut history = vec![IterationRecord {
            iter: 0,
            objective: eval.objective,
            residual,
            step: 0.0,
            line_search_trials: 0,
            newton_iterations: eval.report.total_iterations(),
            max_newton_residual: eval.report.max_residual(),
            active_fraction: self.active_fraction(&u),
        }];
        observe(&history[0]);
        let mut sigma = opts.initial_step;
        let mut status = OptimizerStatus::MaxIterations;
        for iter in 1..=opts.max_iter {
            if residual <= tol {
                status = OptimizerStatus::Converged;
                break;
            }
            let mut accepted = None;
            let mut trials = 0;
            for _ in 0..=opts.max_halvings {
                trials += 1;
                let cand = self.project(&u.add_scaled(-sigma, &grad));
                let decrease = self.inner(&grad, &u.add_scaled(-1.0, &cand));
                if let Ok(e) = self.evaluate(&cand) {
                    if e.objective <= eval.objective - opts.armijo_c * decrease {
                        accepted = Some((cand, e));
                        break;
                    }
                }
                sigma *= opts.backtrack;
            }
            let Some((cand, e)) = accepted else {
                status = OptimizerStatus::LineSearchFailed;
                break;
            };
            u = cand;
            eval = e;
            grad = self.reduced_gradient(&self.adjoint(&eval.trajectory)?, &u);
            residual = self.residual(&u, &grad);
            let rec = IterationRecord {
                iter,
                objective: eval.objective,
                residual,
                step: sigma,
                line_search_trials: trials,
                newton_iterations: eval.report.total_iterations(),
                max_newton_residual: eval.report.max_residual(),
                active_fraction: self.active_fraction(&u),
            };
            observe(&rec);
            history.push(rec);
            sigma *= 2.0;
        }
        if status == OptimizerStatus::MaxIterations && residual <= tol {
            status = OptimizerStatus::Converged;
        }
        Ok(OptimizationResult {
            control: u,
            objective: eval.objective,
            residual,
            status,
            history,
            trajectory: eval.trajectory,
        })
    }
}

fn project_field(u: &mut [f64], bound: &Bound, n: usize) {
    for (e, c) in u.chunks_mut(n).enumerate() {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let b = bound.at(e);
        if norm > b {
            let s = b / norm;
            c.iter_mut().for_each(|x| *x *= s);
        }
    }
}
