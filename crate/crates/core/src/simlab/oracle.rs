//! `theta* = (E[alpha_i(X) X])_i` under a generator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::generators::{Generator, GeneratorSpec};
use crate::error::{CarError, Result};
use crate::feature_maps::FeatureMap;
use crate::policies::{alpha, AlphaKind, ParameterMatrix};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub theta: ParameterMatrix,
    /// Standard errors per entry; zero for closed forms.
    pub se: Vec<Vec<f64>>,
    pub exact: bool,
}

pub const DEFAULT_N_MC: usize = 1_000_000;

/// Closed form for `(A + B, B, C)` with sign alpha.
pub fn table1_sign_oracle() -> ParameterMatrix {
    let s = 1.0 / PI.sqrt();
    let h = (2.0 / PI).sqrt();
    ParameterMatrix {
        xis: vec![vec![2.0 * s, s, 0.0], vec![h, h, 0.0], vec![0.0, 0.0, 1.0]],
    }
}

/// Closed form where one exists, otherwise a Monte Carlo mean over `n_mc`
/// draws of the mapped covariate.
pub fn oracle_parameter(gen: &Generator, map: &FeatureMap, kind: AlphaKind, n_mc: usize, rng: &mut RngStream) -> Result<OracleEstimate> {
    if matches!(gen.spec(), GeneratorSpec::Table1Continuous) && matches!(map, FeatureMap::Identity) && kind == AlphaKind::Sign {
        return Ok(OracleEstimate {
            theta: table1_sign_oracle(),
            se: vec![vec![0.0; 3]; 3],
            exact: true,
        });
    }
    monte_carlo_oracle(gen, map, kind, n_mc, rng)
}

pub fn monte_carlo_oracle(gen: &Generator, map: &FeatureMap, kind: AlphaKind, n_mc: usize, rng: &mut RngStream) -> Result<OracleEstimate> {
    if n_mc < 10_000 {
        return Err(CarError::invalid(format!("n_mc must be at least 10000, got {n_mc}")));
    }
    let d = map.output_dim(gen.raw_dim());
    let mut sum = vec![vec![0.0; d]; d];
    let mut sq = vec![vec![0.0; d]; d];
    let mut cur = gen.cursor(rng);
    let (mut raw, mut extra, mut x) = (Vec::new(), Vec::new(), Vec::with_capacity(d));
    for i in 0..n_mc {
        if gen.max_units().is_some_and(|m| i % m == 0 && i > 0) {
            cur = gen.cursor(rng);
        }
        gen.draw(&mut cur, rng, &mut raw, &mut extra)?;
        map.apply_into(&raw, &mut x)?;
        for j in 0..d {
            let a = alpha(&x, j, kind);
            if a == 0.0 {
                continue;
            }
            for k in 0..d {
                let v = a * x[k];
                sum[j][k] += v;
                sq[j][k] += v * v;
            }
        }
    }
    let n = n_mc as f64;
    let mut se = vec![vec![0.0; d]; d];
    for j in 0..d {
        for k in 0..d {
            let m = sum[j][k] / n;
            let var = (sq[j][k] / n - m * m).max(0.0) * n / (n - 1.0);
            se[j][k] = (var / n).sqrt();
            sum[j][k] = m;
        }
    }
    Ok(OracleEstimate {
        theta: ParameterMatrix { xis: sum },
        se,
        exact: false,
    })
}
