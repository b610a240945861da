//! Discrete adjoint of the implicit Euler scheme.
//!
//! With the Lagrangian `J - sum_k dt (R^k)^T F_k`, stationarity in `Q^k`
//! gives the backward recursion
//! `J(Q^k) R^k = (g_k + M R^{k+1}) / dt`, `R^{K+1} = 0`, where `g_k` is the
//! derivative of the discrete objective with respect to `Q^k`.

use crate::control::{Targets, Weights};
use crate::error::{Error, Result};
use crate::forward::{Model, Trajectory};
use crate::linalg::axpy;

#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    /// `R^0 .. R^K`.
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    /// CG iterations per backward step, ordered from `K` down to `0`.
    pub linear_iterations: Vec<usize>,
}

impl AdjointTrajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }
}

/// Derivative of the tracking part of the objective with respect to `Q^k`:
/// `w_k (beta_Ω M (Q^k - Q_Ω^k) + beta_Γ B (Q^k - Q_Γ))`, plus
/// `beta_tf M (Q^K - Q_tf)` at the final level.
pub fn tracking_source(
    model: &Model,
    q: &[f64],
    k: usize,
    targets: &Targets,
    weights: &Weights,
) -> Vec<f64> {
    let ops = model.disc().ops();
    let n = model.disc().ncoef();
    let p = model.params();
    let w = p.time_weight(k);
    let mut g = vec![0.0; q.len()];
    if weights.beta_domain != 0.0 {
        let e: Vec<f64> = q
            .iter()
            .zip(targets.domain.at(k))
            .map(|(a, b)| a - b)
            .collect();
        axpy(
            w * weights.beta_domain,
            &ops.mass().apply_vec(&e, n),
            &mut g,
        );
    }
    if weights.beta_boundary != 0.0 {
        let e: Vec<f64> = q
            .iter()
            .zip(&targets.boundary)
            .map(|(a, b)| a - b)
            .collect();
        axpy(
            w * weights.beta_boundary,
            &ops.boundary_mass().apply_vec(&e, n),
            &mut g,
        );
    }
    if k == p.n_steps && weights.beta_final != 0.0 {
        let e: Vec<f64> = q
            .iter()
            .zip(&targets.final_state)
            .map(|(a, b)| a - b)
            .collect();
        axpy(weights.beta_final, &ops.mass().apply_vec(&e, n), &mut g);
    }
    g
}

/// Backward sweep producing `R^0 .. R^K`. The step Jacobian at each forward
/// state is reassembled, and one linear solve is done per level.
pub fn solve_adjoint(
    model: &Model,
    fwd: &Trajectory,
    targets: &Targets,
    weights: &Weights,
) -> Result<AdjointTrajectory> {
    let k_max = model.params().n_steps;
    if fwd.n_steps() != k_max {
        return Err(Error::Precondition(format!(
            "trajectory has {} steps, model expects {k_max}",
            fwd.n_steps()
        )));
    }
    targets.check_dims(model.state_len(), k_max)?;
    let n = model.disc().ncoef();
    let dt = model.params().dt;
    let mass = model.disc().ops().mass();
    let mut states = vec![Vec::new(); k_max + 1];
    let mut linear_iterations = Vec::with_capacity(k_max + 1);
    let mut next: Option<Vec<f64>> = None;
    for k in (0..=k_max).rev() {
        let q = fwd.state(k)?;
        let mut rhs = tracking_source(model, &q, k, targets, weights);
        if let Some(r) = &next {
            axpy(1.0, &mass.apply_vec(r, n), &mut rhs);
        }
        for x in rhs.iter_mut() {
            *x /= dt;
        }
        let jac = model.jacobian(&q);
        let (r, its) = model.solve_linear(&jac, &rhs).map_err(|e| e.at_step(k))?;
        linear_iterations.push(its);
        states[k] = r.clone();
        next = Some(r);
    }
    Ok(AdjointTrajectory {
        states,
        dt,
        linear_iterations,
    })
}
