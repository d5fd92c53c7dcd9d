//! Summary statistics over replications.

use serde::{Deserialize, Serialize};

use crate::error::{CarError, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with denominator `n - 1`.
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Mean, standard deviation and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftStat {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

/// Shift on an additional covariate: replication statistics of the
/// terminal imbalance `sum (T_i - rho) Y_i`.
pub fn shift_statistic(values: &[f64]) -> Result<ShiftStat> {
    if values.len() < 2 {
        return Err(CarError::invalid("shift statistic needs at least 2 replications"));
    }
    let s = sd(values);
    Ok(ShiftStat {
        mean: mean(values),
        sd: s,
        se: s / (values.len() as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub pass: bool,
}

pub const SKEW_LIMIT: f64 = 0.15;
pub const KURT_LIMIT: f64 = 0.3;

/// Moment check of standardized values against a normal shape.
pub fn normality_check(values: &[f64]) -> Result<NormalityReport> {
    if values.len() < 2000 {
        return Err(CarError::invalid(format!("normality check needs at least 2000 replications, got {}", values.len())));
    }
    let n = values.len() as f64;
    let m = mean(values);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(CarError::invalid("normality check on a constant sample"));
    }
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    Ok(NormalityReport {
        n: values.len(),
        skewness,
        excess_kurtosis,
        pass: skewness.abs() < SKEW_LIMIT && excess_kurtosis.abs() < KURT_LIMIT,
    })
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let size = series.len() / batches;
    let means: Vec<f64> = series.chunks_exact(size).take(batches).map(mean).collect();
    (mean(series), sd(&means) / (means.len() as f64).sqrt())
}
