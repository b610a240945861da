#![allow(dead_code)]

use std::sync::Arc;

use qtensor_control::experiments::PlanarDefect;
use qtensor_control::fem::{interpolate, interpolate_faces};
use qtensor_control::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut StdRng, len: usize, half_width: f64) -> Vec<f64> {
    (0..len)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect()
}

pub fn tight_solver() -> SolverOptions {
    SolverOptions {
        newton_rtol: 1e-13,
        cg_rtol: 1e-13,
        ..SolverOptions::default()
    }
}

pub fn planar_disc(n: usize) -> Arc<Discretization> {
    let mesh = Mesh::unit(Dim::Two, n).unwrap();
    let pot = BulkPotential::new(BulkParams::planar(), Dim::Two).unwrap();
    Arc::new(Discretization::new(mesh, pot).unwrap())
}

pub fn spatial_disc(n: usize) -> Arc<Discretization> {
    let mesh = Mesh::unit(Dim::Three, n).unwrap();
    let pot = BulkPotential::new(BulkParams::spatial(), Dim::Three).unwrap();
    Arc::new(Discretization::new(mesh, pot).unwrap())
}

pub fn params(eta_gamma: f64, lambda: f64, dt: f64, n_steps: usize) -> ModelParams {
    ModelParams {
        eta_dw: 0.2,
        eta_gamma,
        lambda,
        dt,
        n_steps,
    }
}

pub const S_STAR: f64 = 0.7;
pub const DELTA: f64 = 0.05;

/// Point-defect problem on a coarse planar mesh: defect at the center,
/// target defect at `(0.25, 0.35)`.
pub struct Small {
    pub problem: Problem,
    pub control: ControlSet,
}

pub fn small_problem(
    n: usize,
    n_steps: usize,
    lambda: f64,
    weights: Weights,
    with_domain: bool,
) -> Small {
    let disc = planar_disc(n);
    let model = Model::new(disc.clone(), params(100.0, lambda, 0.004, n_steps))
        .unwrap()
        .with_solver(tight_solver());
    let basis = disc.potential().basis().clone();
    let mesh = disc.mesh();
    let center = PlanarDefect::plus_half(0.5, 0.5);
    let goal = PlanarDefect::plus_half(0.25, 0.35);
    let q0 = interpolate(mesh, |x| center.eval(&basis, S_STAR, DELTA, x)).unwrap();
    let target = interpolate(mesh, |x| goal.eval(&basis, S_STAR, DELTA, x)).unwrap();
    let boundary = interpolate_faces(mesh, |x| center.eval(&basis, S_STAR, DELTA, x)).unwrap();
    let mut r = rng(11);
    let domain = with_domain.then(|| {
        (0..=n_steps)
            .map(|_| uniform(&mut r, mesh.n_cells() * 2, 0.3))
            .collect()
    });
    let targets = Targets {
        domain: TimeField::Constant(target.clone()),
        boundary: uniform(&mut r, target.len(), 0.2),
        final_state: target,
    };
    let problem = Problem::new(model, q0, targets, weights, Bounds::default()).unwrap();
    Small {
        problem,
        control: ControlSet { boundary, domain },
    }
}

pub fn experiment_weights() -> Weights {
    Weights {
        beta_domain: 1.0,
        beta_boundary: 0.0,
        beta_final: 1.0,
        alpha_domain: 0.0,
        alpha_boundary: 0.01,
    }
}

pub fn all_weights() -> Weights {
    Weights {
        beta_domain: 1.0,
        beta_boundary: 0.5,
        beta_final: 2.0,
        alpha_domain: 0.1,
        alpha_boundary: 0.01,
    }
}

/// Random P0 boundary control with every face inside the unit ball.
pub fn random_feasible(problem: &Problem, base: &ControlSet, rng: &mut StdRng) -> ControlSet {
    let u = ControlSet {
        boundary: uniform(rng, base.boundary.len(), 0.7),
        domain: base
            .domain
            .as_ref()
            .map(|d| d.iter().map(|u| uniform(rng, u.len(), 0.7)).collect()),
    };
    problem.project(&u)
}

pub fn random_direction(base: &ControlSet, rng: &mut StdRng) -> ControlSet {
    ControlSet {
        boundary: uniform(rng, base.boundary.len(), 1.0),
        domain: base
            .domain
            .as_ref()
            .map(|d| d.iter().map(|u| uniform(rng, u.len(), 1.0)).collect()),
    }
}

pub fn central_difference(problem: &Problem, u: &ControlSet, dir: &ControlSet, eps: f64) -> f64 {
    let jp = problem.evaluate(&u.add_scaled(eps, dir)).unwrap().objective;
    let jm = problem
        .evaluate(&u.add_scaled(-eps, dir))
        .unwrap()
        .objective;
    (jp - jm) / (2.0 * eps)
}

/// `L2` norm of a P1 field.
pub fn l2(disc: &Discretization, q: &[f64]) -> f64 {
    disc.ops().mass().inner(q, q, disc.ncoef()).sqrt()
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Linearized state `Xi` for control direction `du`:
/// `J(Q^k) Xi^k = M Xi^{k-1} / dt + eta_gamma C_Γ du_Γ + lambda C_Ω du_Ω^k`.
pub fn linearized_states(problem: &Problem, traj: &Trajectory, du: &ControlSet) -> Vec<Vec<f64>> {
    let model = &problem.model;
    let n = model.disc().ncoef();
    let dt = model.params().dt;
    let mut xi = vec![vec![0.0; model.state_len()]];
    for k in 1..=model.params().n_steps {
        let mut rhs = model.disc().ops().mass().apply_vec(&xi[k - 1], n);
        rhs.iter_mut().for_each(|x| *x /= dt);
        let load = model.control_load(du, k);
        rhs.iter_mut().zip(&load).for_each(|(r, l)| *r += l);
        let jac = model.jacobian(&traj.state(k).unwrap());
        xi.push(model.solve_linear(&jac, &rhs).unwrap().0);
    }
    xi
}
