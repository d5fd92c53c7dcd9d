//! The shift-free allocation function
//! `g(lambda, x) = rho + (p/d) sum_i alpha_i(x) beta_i(lambda)`
//! and its running-mean parameter.
//!
//! `beta_i` is a smoothed `-sgn(xi_i . lambda)`: it vanishes at the origin,
//! is odd in both `xi_i` and `lambda`, and saturates at `-1`/`+1` once
//! `lambda` is far enough inside the cone around `+-xi_i` whose half-angle
//! is set by `epsilon(theta)`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::linalg::min_singular_value;
use super::{AlphaKind, EpsilonMode};
use crate::error::{CarError, Result};

/// Relative tolerance under which a column of theta counts as zero.
const ZERO_COLUMN_TOL: f64 = 1e-12;
/// `sigma_min(A)` below this makes theta singular.
const SINGULAR_TOL: f64 = 1e-10;

/// `theta = (xi_1, .., xi_d)`, each column of length `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterMatrix {
    pub xis: Vec<Vec<f64>>,
}

impl ParameterMatrix {
    pub fn zeros(d: usize) -> Self {
        ParameterMatrix {
            xis: vec![vec![0.0; d]; d],
        }
    }

    pub fn new(xis: Vec<Vec<f64>>) -> Result<Self> {
        let d = xis.len();
        if d == 0 {
            return Err(CarError::invalid("parameter matrix needs at least one column"));
        }
        if xis.iter().any(|c| c.len() != d) {
            return Err(CarError::invalid(format!("parameter matrix must be square ({d} columns of length {d})")));
        }
        if xis.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CarError::invalid("parameter matrix entries must be finite"));
        }
        Ok(ParameterMatrix { xis })
    }

    pub fn dim(&self) -> usize {
        self.xis.len()
    }

    pub fn frobenius(&self) -> f64 {
        self.xis.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `alpha_i(x)` for the 1-based-in-math, 0-based-here coordinate `i`.
pub fn alpha(x: &[f64], i: usize, kind: AlphaKind) -> f64 {
    match kind {
        AlphaKind::Sign => {
            let v = x[i];
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        AlphaKind::LinfNormalized => {
            let m = linf(x);
            if m == 0.0 {
                0.0
            } else {
                x[i] / m
            }
        }
    }
}

fn linf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zero_threshold(theta: &ParameterMatrix) -> f64 {
    let biggest = theta.xis.iter().map(|c| norm(c)).fold(0.0, f64::max);
    ZERO_COLUMN_TOL * (1.0 + biggest)
}

/// `epsilon(theta) = sigma_min(A) / sqrt(d + 1)` where `A` has the
/// unit-normalised columns of theta; `0` when theta is singular.
pub fn epsilon_of_theta(theta: &ParameterMatrix) -> f64 {
    let tol = zero_threshold(theta);
    let mut cols = Vec::with_capacity(theta.dim());
    for xi in &theta.xis {
        let n = norm(xi);
        if n < tol {
            return 0.0;
        }
        cols.push(xi.iter().map(|v| v / n).collect::<Vec<_>>());
    }
    let smin = min_singular_value(&cols);
    if smin < SINGULAR_TOL {
        0.0
    } else {
        smin / ((theta.dim() + 1) as f64).sqrt()
    }
}

/// `tau(lambda) = sqrt(1+eps^2) (xi/|xi|).lambda / sqrt(1 + eps^2 |lambda|^2)`.
/// `None` when `xi` is the zero vector.
pub fn tau(xi: &[f64], eps: f64, lambda: &[f64]) -> Option<f64> {
    let n = norm(xi);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(tau_unit(dot(xi, lambda) / n, eps, norm_sq(lambda)))
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[inline]
fn tau_unit(projection: f64, eps: f64, lambda_sq: f64) -> f64 {
    let e2 = eps * eps;
    (1.0 + e2).sqrt() * projection / (1.0 + e2 * lambda_sq).sqrt()
}

/// `-sin(v)` on `[-pi/2, pi/2]`, `-sgn(v)` outside.
pub fn cutsin(v: f64) -> f64 {
    if v.abs() <= FRAC_PI_2 {
        -v.sin()
    } else {
        -v.signum()
    }
}

/// `beta(lambda) = cutsin(pi/2 * tau(lambda))`, `0` for a zero `xi`.
pub fn beta(xi: &[f64], eps: f64, lambda: &[f64]) -> f64 {
    match tau(xi, eps, lambda) {
        Some(t) => cutsin(FRAC_PI_2 * t),
        None => 0.0,
    }
}

/// Theta reduced to what `g` needs: unit directions and `epsilon`.
/// Columns below the zero threshold become `None` and contribute `beta = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleComponents {
    pub directions: Vec<Option<Vec<f64>>>,
    pub epsilon: f64,
}

impl FeasibleComponents {
    pub fn new(theta: &ParameterMatrix, mode: EpsilonMode) -> Self {
        let tol = zero_threshold(theta);
        let directions = theta
            .xis
            .iter()
            .map(|xi| {
                let n = norm(xi);
                (n >= tol && n > 0.0).then(|| xi.iter().map(|v| v / n).collect())
            })
            .collect();
        let epsilon = match mode {
            EpsilonMode::Computed => epsilon_of_theta(theta),
            EpsilonMode::FixedZero => 0.0,
        };
        FeasibleComponents { directions, epsilon }
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// `beta_i(lambda)` for every column.
    pub fn betas(&self, lambda: &[f64]) -> Vec<f64> {
        let lsq = norm_sq(lambda);
        self.directions
            .iter()
            .map(|d| d.as_ref().map_or(0.0, |u| cutsin(FRAC_PI_2 * tau_unit(dot(u, lambda), self.epsilon, lsq))))
            .collect()
    }

    /// `g(lambda, x)`.
    pub fn prob(&self, rho: f64, p: f64, kind: AlphaKind, lambda: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let lsq = norm_sq(lambda);
        let inf = linf(x);
        let mut acc = 0.0;
        for (i, dir) in self.directions.iter().enumerate() {
            let a = match kind {
                AlphaKind::Sign => alpha(x, i, kind),
                AlphaKind::LinfNormalized if inf == 0.0 => 0.0,
                AlphaKind::LinfNormalized => x[i] / inf,
            };
            if a == 0.0 {
                continue;
            }
            if let Some(u) = dir {
                acc += a * cutsin(FRAC_PI_2 * tau_unit(dot(u, lambda), self.epsilon, lsq));
            }
        }
        rho + p / d as f64 * acc
    }
}

/// `g_theta(lambda, x)` computed from scratch.
pub fn feasible_prob(theta: &ParameterMatrix, lambda: &[f64], x: &[f64], rho: f64, p: f64, kind: AlphaKind, mode: EpsilonMode) -> f64 {
    FeasibleComponents::new(theta, mode).prob(rho, p, kind, lambda, x)
}

/// Running-mean update `xi_i += (alpha_i(x) x - xi_i) / (n + 1)` where `n`
/// counts the units already folded into `theta`.
pub fn update_parameter(theta: &ParameterMatrix, x_next: &[f64], n: u64, kind: AlphaKind) -> ParameterMatrix {
    let mut next = theta.clone();
    update_parameter_in_place(&mut next, x_next, n, kind);
    next
}

pub fn update_parameter_in_place(theta: &mut ParameterMatrix, x_next: &[f64], n: u64, kind: AlphaKind) {
    let w = 1.0 / (n as f64 + 1.0);
    for (i, xi) in theta.xis.iter_mut().enumerate() {
        let a = alpha(x_next, i, kind);
        for (c, &xv) in xi.iter_mut().zip(x_next) {
            *c += (a * xv - *c) * w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(&[2.0, -3.0], 1, AlphaKind::Sign), -1.0);
        assert_eq!(alpha(&[0.0, 5.0], 0, AlphaKind::Sign), 0.0);
        assert_eq!(alpha(&[2.0, -4.0], 0, AlphaKind::LinfNormalized), 0.5);
        assert_eq!(alpha(&[0.0, 0.0], 0, AlphaKind::LinfNormalized), 0.0);
    }

    #[test]
    fn epsilon_identity_and_singular() {
        let id = ParameterMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((epsilon_of_theta(&id) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let col = ParameterMatrix::new(vec![vec![1.0, 2.0], vec![-3.0, -6.0]]).unwrap();
        assert_eq!(epsilon_of_theta(&col), 0.0);
        assert_eq!(epsilon_of_theta(&ParameterMatrix::zeros(3)), 0.0);
        let tiny = ParameterMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1e-15]]).unwrap();
        assert_eq!(epsilon_of_theta(&tiny), 0.0);
    }

    /// Independent route: eigenvalues of `A^T A` through nalgebra.
    fn eps_via_eigen(theta: &ParameterMatrix) -> f64 {
        let d = theta.dim();
        let a = DMatrix::from_fn(d, d, |r, c| {
            let xi = &theta.xis[c];
            xi[r] / xi.iter().map(|v| v * v).sum::<f64>().sqrt()
        });
        let ata = a.transpose() * &a;
        let eig = SymmetricEigen::new(ata);
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        lmin.max(0.0).sqrt() / ((d + 1) as f64).sqrt()
    }

    #[test]
    fn epsilon_matches_eigen_oracle() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let theta = ParameterMatrix::new(vec![vec![1.0, 0.0], vec![h, h]]).unwrap();
        let want = eps_via_eigen(&theta);
        // sigma_min^2 = 1 - 1/sqrt(2)
        assert!((want - (1.0 - h).sqrt() / 3f64.sqrt()).abs() < 1e-12);
        assert!((epsilon_of_theta(&theta) - want).abs() < 1e-12);
    }

    #[test]
    fn tau_and_beta_examples() {
        // Reference values from a 30-digit evaluation of the closed form.
        assert_eq!(tau(&[1.0, 0.0], 0.5, &[0.0, 0.0]), Some(0.0));
        let t = tau(&[1.0, 0.0], 0.5, &[3.0, 4.0]).unwrap();
        // sqrt(1.25) * 3 / sqrt(7.25)
        assert!((t - 1.245_682_197_806_1).abs() < 1e-12, "{t}");
        assert_eq!(beta(&[1.0, 0.0], 0.5, &[3.0, 4.0]), -1.0);
        let t = tau(&[1.0, 0.0], 0.5, &[0.4, 0.0]).unwrap();
        assert!((t - 0.438_529_009_653_5).abs() < 1e-12, "{t}");
        let b = beta(&[1.0, 0.0], 0.5, &[0.4, 0.0]);
        assert!((b + 0.635_641_921_620_7).abs() < 1e-12, "{b}");
        assert_eq!(beta(&[1.0, 0.0], 0.5, &[0.0, 0.0]), 0.0);
        assert_eq!(tau(&[0.0, 0.0], 0.5, &[1.0, 1.0]), None);
        assert_eq!(beta(&[0.0, 0.0], 0.5, &[1.0, 1.0]), 0.0);
        // eps = 0 degenerates to the plain projection
        assert!((tau(&[2.0, 0.0], 0.0, &[3.0, 4.0]).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn feasible_examples() {
        let theta = ParameterMatrix::new(vec![vec![1.0, 0.2], vec![-0.3, 1.0]]).unwrap();
        let rho = 2.0 / 3.0;
        for x in [[1.0, 1.0], [-2.0, 0.5], [0.0, 0.0]] {
            let g = feasible_prob(&theta, &[0.0, 0.0], &x, rho, 0.2, AlphaKind::Sign, EpsilonMode::Computed);
            assert_eq!(g, rho);
        }
        // alpha = (1, -1), beta = (-1, 0.5) by hand: 2/3 + 0.1 * (-1 - 0.5)
        let by_hand: f64 = rho + 0.2 / 2.0 * (1.0 * -1.0 + -1.0 * 0.5);
        assert!((by_hand - 0.516_666_666_666_666_7).abs() < 1e-15);
    }

    #[test]
    fn update_examples() {
        let t0 = ParameterMatrix::zeros(2);
        let t1 = update_parameter(&t0, &[2.0, -3.0], 0, AlphaKind::Sign);
        assert_eq!(t1.xis, vec![vec![2.0, -3.0], vec![-2.0, 3.0]]);
        let t2 = update_parameter(&t1, &[4.0, 1.0], 1, AlphaKind::Sign);
        assert_eq!(t2.xis, vec![vec![3.0, -1.0], vec![1.0, 2.0]]);
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    fn arb_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, d)
    }

    proptest! {
        #[test]
        fn beta_symmetries(xi in arb_vec(3), lam in arb_vec(3), eps in 0.0f64..1.0, c in 0.01f64..100.0) {
            prop_assume!(norm(&xi) > 1e-6);
            let b = beta(&xi, eps, &lam);
            let neg_xi: Vec<f64> = xi.iter().map(|v| -v).collect();
            let neg_lam: Vec<f64> = lam.iter().map(|v| -v).collect();
            let scaled: Vec<f64> = xi.iter().map(|v| c * v).collect();
            prop_assert!((-1.0..=1.0).contains(&b));
            prop_assert!((b + beta(&neg_xi, eps, &lam)).abs() < 1e-12);
            prop_assert!((b + beta(&xi, eps, &neg_lam)).abs() < 1e-12);
            prop_assert!((b - beta(&scaled, eps, &lam)).abs() < 1e-12);
            if dot(&xi, &lam) >= 0.0 {
                prop_assert!(b <= 0.0);
            }
        }

        #[test]
        fn beta_saturates_in_cone(xi in arb_vec(3), dir in arb_vec(3), d_uni in 0.05f64..0.9, extra in 0.0f64..0.09, r in 1.0f64..10.0) {
            prop_assume!(norm(&xi) > 1e-3 && norm(&dir) > 1e-3);
            let eps = d_uni + extra;
            let u = unit(&dir);
            let cos = dot(&u, &unit(&xi));
            prop_assume!(cos > eps);
            let m = (1.0 / (d_uni * d_uni)).max(1.0);
            let lam: Vec<f64> = u.iter().map(|v| v * m * r).collect();
            prop_assert_eq!(beta(&xi, eps, &lam), -1.0);
        }

        #[test]
        fn epsilon_scale_invariant(a in arb_vec(3), b in arb_vec(3), c in arb_vec(3), s in prop::collection::vec(0.01f64..50.0, 3)) {
            let theta = ParameterMatrix::new(vec![a.clone(), b.clone(), c.clone()]).unwrap();
            let scaled = ParameterMatrix::new(vec![
                a.iter().map(|v| v * s[0]).collect(),
                b.iter().map(|v| v * s[1]).collect(),
                c.iter().map(|v| v * s[2]).collect(),
            ]).unwrap();
            let e = epsilon_of_theta(&theta);
            prop_assert!((0.0..1.0).contains(&e));
            prop_assert!((e - epsilon_of_theta(&scaled)).abs() < 1e-10);
        }

        #[test]
        fn g_bounded_and_symmetric(a in arb_vec(3), b in arb_vec(3), c in arb_vec(3), lam in arb_vec(3), x in arb_vec(3), linf_alpha in any::<bool>()) {
            let theta = ParameterMatrix::new(vec![a, b, c]).unwrap();
            let (rho, p) = (2.0 / 3.0, 0.2);
            let kind = if linf_alpha { AlphaKind::LinfNormalized } else { AlphaKind::Sign };
            let comp = FeasibleComponents::new(&theta, EpsilonMode::Computed);
            let g = comp.prob(rho, p, kind, &lam, &x);
            prop_assert!(g >= rho - p - 1e-12 && g <= rho + p + 1e-12);
            let neg: Vec<f64> = lam.iter().map(|v| -v).collect();
            prop_assert!((g + comp.prob(rho, p, kind, &neg, &x) - 2.0 * rho).abs() < 1e-12);
            prop_assert_eq!(comp.prob(rho, p, kind, &[0.0; 3], &x), rho);
        }
    }
}
