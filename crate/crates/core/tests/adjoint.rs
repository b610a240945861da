mod common;

use common::*;
use qtensor_control::*;

fn no_tracking() -> Weights {
    Weights {
        beta_domain: 0.0,
        beta_boundary: 0.0,
        beta_final: 0.0,
        alpha_domain: 0.1,
        alpha_boundary: 0.01,
    }
}

#[test]
fn adjoint_vanishes_without_tracking() {
    let small = small_problem(6, 5, 1.0, no_tracking(), true);
    let eval = small.problem.evaluate(&small.control).unwrap();
    let adj = small.problem.adjoint(&eval.trajectory).unwrap();
    assert_eq!(adj.n_steps(), 5);
    for k in 0..=5 {
        assert!(adj.state(k).iter().all(|&x| x == 0.0), "level {k}");
    }
    let g = small.problem.reduced_gradient(&adj, &small.control);
    let tf = small.problem.model.params().final_time();
    for (gi, ui) in g.boundary.iter().zip(&small.control.boundary) {
        assert!((gi - 0.01 * tf * ui).abs() < 1e-15);
    }
}

#[test]
fn adjoint_vanishes_when_the_final_target_is_reached() {
    let small = small_problem(6, 5, 0.0, experiment_weights(), false);
    let eval = small.problem.evaluate(&small.control).unwrap();
    let mut problem = small.problem.clone();
    problem.weights = Weights {
        beta_domain: 0.0,
        beta_boundary: 0.0,
        beta_final: 1.0,
        alpha_domain: 0.0,
        alpha_boundary: 0.0,
    };
    problem.targets.final_state = eval.trajectory.final_state().unwrap().into_owned();
    let adj = problem.adjoint(&eval.trajectory).unwrap();
    for k in 0..=5 {
        assert!(adj.state(k).iter().all(|x| x.abs() < 1e-14), "level {k}");
    }
}

#[test]
fn adjoint_is_linear_in_the_tracking_weights() {
    let small = small_problem(6, 5, 0.0, all_weights(), false);
    let eval = small.problem.evaluate(&small.control).unwrap();
    let traj = &eval.trajectory;
    let mut p = small.problem.clone();
    let single = |p: &mut Problem, w: Weights| {
        p.weights = w;
        p.adjoint(traj).unwrap()
    };
    let zero = no_tracking();
    let a = single(
        &mut p,
        Weights {
            beta_domain: 1.0,
            ..zero
        },
    );
    let b = single(
        &mut p,
        Weights {
            beta_boundary: 1.0,
            ..zero
        },
    );
    let c = single(
        &mut p,
        Weights {
            beta_final: 1.0,
            ..zero
        },
    );
    let all = single(
        &mut p,
        Weights {
            beta_domain: 1.0,
            beta_boundary: 0.5,
            beta_final: 2.0,
            ..zero
        },
    );
    for k in 0..=5 {
        let scale = all.state(k).iter().fold(1e-300f64, |m, x| m.max(x.abs()));
        for i in 0..all.state(k).len() {
            let combo = a.state(k)[i] + 0.5 * b.state(k)[i] + 2.0 * c.state(k)[i];
            assert!((combo - all.state(k)[i]).abs() <= 1e-8 * scale, "level {k}");
        }
    }
}

/// `sum_k g_k . Xi^k = dt sum_k R^k . b_k`, with `Xi` the linearized state
/// for load `b_k` and `g_k` the tracking source.
#[test]
fn adjoint_satisfies_the_transpose_identity() {
    for (lambda, with_domain) in [(0.0, false), (1.0, true)] {
        let small = small_problem(6, 8, lambda, all_weights(), with_domain);
        let p = &small.problem;
        let eval = p.evaluate(&small.control).unwrap();
        let adj = p.adjoint(&eval.trajectory).unwrap();
        let mut r = rng(17);
        let du = random_direction(&small.control, &mut r);
        let xi = linearized_states(p, &eval.trajectory, &du);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for k in 1..=8 {
            let q = eval.trajectory.state(k).unwrap();
            let g = adjoint::tracking_source(&p.model, &q, k, &p.targets, &p.weights);
            lhs += g.iter().zip(&xi[k]).map(|(a, b)| a * b).sum::<f64>();
            let load = p.model.control_load(&du, k);
            rhs += p.model.params().dt
                * load
                    .iter()
                    .zip(adj.state(k))
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        assert!(rel < 1e-9, "lambda {lambda}: {lhs} vs {rhs} ({rel:e})");
    }
}
