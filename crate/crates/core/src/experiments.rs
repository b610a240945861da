//! Analytic fields for the defect-placement experiments.
//!
//! A melted line field `r^2 / (r^2 + delta^2) * s (n n^T - I/d)` carries a
//! point (d = 2) or line (d = 3) defect where `r = 0`.

use std::f64::consts::PI;

use crate::mesh::Point;
use crate::qtensor::{Basis, QCoeffs};

/// Four-quadrant angle of `x - (a, b)`.
pub fn theta(a: f64, b: f64, x: &Point) -> f64 {
    (x[1] - b).atan2(x[0] - a)
}

/// Planar distance of `x` to `(a, b)`.
pub fn radius(a: f64, b: f64, x: &Point) -> f64 {
    (x[0] - a).hypot(x[1] - b)
}

/// Core profile `r^2 / (r^2 + delta^2)`.
pub fn melt(r: f64, delta: f64) -> f64 {
    let r2 = r * r;
    if r2 == 0.0 {
        0.0
    } else {
        r2 / (r2 + delta * delta)
    }
}

/// Uniaxial tensor with in-plane director angle `phi`, scaled by `scale * s`.
pub fn planar_uniaxial(basis: &Basis, s: f64, scale: f64, phi: f64) -> QCoeffs {
    let n = [phi.cos(), phi.sin(), 0.0];
    let d = basis.dim().get();
    basis
        .uniaxial(s * scale, &n[..d])
        .expect("director is a unit vector")
}

/// Point (or straight line) defect of degree `degree` at `(a, b)` with
/// director angle `degree * theta + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarDefect {
    pub a: f64,
    pub b: f64,
    pub degree: f64,
    pub offset: f64,
}

impl PlanarDefect {
    pub fn plus_half(a: f64, b: f64) -> Self {
        PlanarDefect {
            a,
            b,
            degree: 0.5,
            offset: 0.0,
        }
    }

    pub fn eval(&self, basis: &Basis, s: f64, delta: f64, x: &Point) -> QCoeffs {
        let r = radius(self.a, self.b, x);
        if r == 0.0 {
            return QCoeffs::zeros(basis.dim());
        }
        let phi = self.degree * theta(self.a, self.b, x) + self.offset;
        planar_uniaxial(basis, s, melt(r, delta), phi)
    }
}

/// `(1 - x_1) Q_n + x_1 Q_m` for a `+1/2` defect `Q_n` and a `-1/2` defect
/// `Q_m`.
pub fn defect_pair(
    basis: &Basis,
    s: f64,
    delta: f64,
    plus: (f64, f64),
    minus: (f64, f64),
    x: &Point,
) -> QCoeffs {
    let qn = PlanarDefect {
        a: plus.0,
        b: plus.1,
        degree: 0.5,
        offset: PI / 2.0,
    }
    .eval(basis, s, delta, x);
    let qm = PlanarDefect {
        a: minus.0,
        b: minus.1,
        degree: -0.5,
        offset: 0.0,
    }
    .eval(basis, s, delta, x);
    qn * (1.0 - x[0]) + qm * x[0]
}

/// Height profile `f(xi) = 3 c0 xi^2 - 2 c0 xi^3` of the target line defect.
pub fn curve_profile(xi: f64, c0: f64) -> f64 {
    3.0 * c0 * xi * xi - 2.0 * c0 * xi * xi * xi
}

pub const CURVE_C0: f64 = 0.6;

/// Point of the target defect curve at parameter `xi`.
pub fn curve_point(xi: f64) -> Point {
    let f = curve_profile(xi, CURVE_C0) + 0.2;
    [f, f, xi]
}

/// Distance from `p` to the target defect curve.
pub fn distance_to_curve(p: &Point) -> f64 {
    // Coarse sampling followed by golden-section refinement.
    let d = |xi: f64| {
        let c = curve_point(xi);
        ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
    };
    let samples = 400;
    let best = (0..=samples)
        .map(|i| i as f64 / samples as f64)
        .min_by(|a, b| d(*a).total_cmp(&d(*b)))
        .unwrap_or(0.0);
    let (mut lo, mut hi) = (
        (best - 1.0 / samples as f64).max(0.0),
        (best + 1.0 / samples as f64).min(1.0),
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if d(m1) < d(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    d(0.5 * (lo + hi))
}

/// `+1/2` line defect following the target curve, director in the
/// `x_3 = const` planes.
pub fn curved_line_defect(basis: &Basis, s: f64, delta: f64, x: &Point) -> QCoeffs {
    let c = curve_point(x[2]);
    PlanarDefect::plus_half(c[0], c[1]).eval(basis, s, delta, x)
}

/// Constant uniaxial tensor with director `(1, 0)`.
pub fn constant_uniaxial(basis: &Basis, s: f64) -> QCoeffs {
    let n = [1.0, 0.0, 0.0];
    basis
        .uniaxial(s, &n[..basis.dim().get()])
        .expect("unit director")
}
