//! Singular values of small dense square matrices by one-sided Jacobi.
//!
//! Works directly on the columns, so the smallest singular value keeps
//! relative accuracy instead of being squared away as in `A^T A`.

const MAX_SWEEPS: usize = 60;

/// Singular values of the matrix whose columns are `columns`, descending.
pub fn singular_values(columns: &[Vec<f64>]) -> Vec<f64> {
    let mut u: Vec<Vec<f64>> = columns.to_vec();
    let n = u.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (alpha, beta, gamma) = gram(&u[i], &u[j]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = u.split_at_mut(j);
                for (a, b) in left[i].iter_mut().zip(right[0].iter_mut()) {
                    let (ai, bj) = (*a, *b);
                    *a = c * ai - s * bj;
                    *b = s * ai + c * bj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = u.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Smallest singular value; `0.0` for an empty matrix.
pub fn min_singular_value(columns: &[Vec<f64>]) -> f64 {
    singular_values(columns).last().copied().unwrap_or(0.0)
}

fn gram(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut aa = 0.0;
    let mut bb = 0.0;
    let mut ab = 0.0;
    for (x, y) in a.iter().zip(b) {
        aa += x * x;
        bb += y * y;
        ab += x * y;
    }
    (aa, bb, ab)
}
