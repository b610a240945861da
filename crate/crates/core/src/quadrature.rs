//! Quadrature on simplices in barycentric coordinates.
//!
//! Weights are normalized to sum to one, so an integral over a cell is
//! `|T| * sum_q w_q f(x_q)`.

use crate::qtensor::Dim;

#[derive(Clone, Debug)]
pub struct SimplexRule {
    /// Barycentric coordinates (`d + 1` used).
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl SimplexRule {
    /// Rule exact for polynomials of total degree `degree` on a `dim`-simplex.
    /// Symmetric rules with positive weights for degrees up to 4, collapsed
    /// Gauss-Legendre products above that.
    pub fn new(dim: Dim, degree: usize) -> Self {
        match (dim, degree) {
            (_, 0 | 1) => centroid_rule(dim),
            (Dim::Two, 2) => {
                let pts = perms3(2.0 / 3.0, 1.0 / 6.0);
                SimplexRule {
                    weights: vec![1.0 / 3.0; 3],
                    points: pts,
                    degree: 2,
                }
            }
            (Dim::Three, 2) => {
                let a = 0.585_410_196_624_968_5;
                let b = 0.138_196_601_125_010_5;
                SimplexRule {
                    points: perms4_1(a, b),
                    weights: vec![0.25; 4],
                    degree: 2,
                }
            }
            (Dim::Two, 3 | 4) => {
                let mut points = perms3(0.108_103_018_168_070, 0.445_948_490_915_965);
                let mut weights = vec![0.223_381_589_678_011; 3];
                points.extend(perms3(0.816_847_572_980_459, 0.091_576_213_509_771));
                weights.extend([0.109_951_743_655_322; 3]);
                SimplexRule {
                    points,
                    weights,
                    degree: 4,
                }
            }
            (Dim::Three, 3..=5) => {
                // 14-point degree-5 rule with positive weights.
                let a1 = 0.310_885_919_263_300_6;
                let a2 = 0.092_735_250_310_891_2;
                let a3 = 0.454_496_295_874_350_3;
                let mut points = perms4_1(1.0 - 3.0 * a1, a1);
                let mut weights = vec![0.112_687_925_718_016_2; 4];
                points.extend(perms4_1(1.0 - 3.0 * a2, a2));
                weights.extend([0.073_493_043_116_361_9; 4]);
                points.extend(perms4_2(a3, 0.5 - a3));
                weights.extend([0.042_546_020_777_081_2; 6]);
                SimplexRule {
                    points,
                    weights,
                    degree: 5,
                }
            }
            _ => Self::collapsed(dim, degree),
        }
    }

    /// Conical-product rule: Gauss-Legendre in each collapsed coordinate.
    pub fn collapsed(dim: Dim, degree: usize) -> Self {
        let d = dim.get();
        let npts = (degree + d).div_ceil(2).max(1);
        let (x, w) = gauss_legendre_unit(npts);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            Dim::Two => {
                for i in 0..npts {
                    for j in 0..npts {
                        let (u, v) = (x[i], x[j]);
                        let l1 = u;
                        let l2 = (1.0 - u) * v;
                        points.push([1.0 - l1 - l2, l1, l2, 0.0]);
                        weights.push(2.0 * w[i] * w[j] * (1.0 - u));
                    }
                }
            }
            Dim::Three => {
                for i in 0..npts {
                    for j in 0..npts {
                        for k in 0..npts {
                            let (u, v, t) = (x[i], x[j], x[k]);
                            let l1 = u;
                            let l2 = (1.0 - u) * v;
                            let l3 = (1.0 - u) * (1.0 - v) * t;
                            points.push([1.0 - l1 - l2 - l3, l1, l2, l3]);
                            weights.push(6.0 * w[i] * w[j] * w[k] * (1.0 - u).powi(2) * (1.0 - v));
                        }
                    }
                }
            }
        }
        SimplexRule {
            points,
            weights,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn centroid_rule(dim: Dim) -> SimplexRule {
    let d = dim.get();
    let w = 1.0 / (d + 1) as f64;
    let mut p = [0.0; 4];
    p[..=d].fill(w);
    SimplexRule {
        points: vec![p],
        weights: vec![1.0],
        degree: 1,
    }
}

fn perms3(a: f64, b: f64) -> Vec<[f64; 4]> {
    vec![[a, b, b, 0.0], [b, a, b, 0.0], [b, b, a, 0.0]]
}

fn perms4_1(a: f64, b: f64) -> Vec<[f64; 4]> {
    vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]]
}

fn perms4_2(a: f64, b: f64) -> Vec<[f64; 4]> {
    vec![
        [a, a, b, b],
        [a, b, a, b],
        [a, b, b, a],
        [b, a, a, b],
        [b, a, b, a],
        [b, b, a, a],
    ]
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Exact mean of a barycentric monomial over the simplex:
    /// `d! prod(a_i!) / (d + sum a_i)!`.
    fn exact_mean(d: usize, exps: &[usize]) -> f64 {
        let total: usize = exps.iter().sum();
        factorial(d) * exps.iter().map(|&a| factorial(a)).product::<f64>() / factorial(d + total)
    }

    fn check_rule(dim: Dim, rule: &SimplexRule, degree: usize) {
        let d = dim.get();
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let mut exps = vec![0usize; d + 1];
        loop {
            let total: usize = exps.iter().sum();
            if total <= degree {
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * (0..=d).map(|i| p[i].powi(exps[i] as i32)).product::<f64>())
                    .sum();
                let e = exact_mean(d, &exps);
                assert!(
                    (q - e).abs() < 1e-13,
                    "{dim:?} degree {degree} exps {exps:?}: {q} vs {e}"
                );
            }
            let mut i = 0;
            loop {
                if i > d {
                    return;
                }
                exps[i] += 1;
                if exps[i] <= degree {
                    break;
                }
                exps[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn symmetric_rules_are_exact() {
        for dim in [Dim::Two, Dim::Three] {
            for degree in [1, 2, 4] {
                let rule = SimplexRule::new(dim, degree);
                check_rule(dim, &rule, rule.degree.max(degree));
            }
        }
    }

    #[test]
    fn collapsed_rules_are_exact() {
        for dim in [Dim::Two, Dim::Three] {
            for degree in [2, 5, 6, 8] {
                check_rule(dim, &SimplexRule::collapsed(dim, degree), degree);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(4);
        for p in 0..8 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14);
        }
    }
}
