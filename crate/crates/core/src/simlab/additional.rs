//! Additional covariates `Y = f(X) + noise` whose imbalance measures the shift.

use serde::{Deserialize, Serialize};

use crate::error::{CarError, Result};

fn default_threshold() -> f64 {
    4.0
}

fn default_power() -> i32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// `sqrt(sum |x_i|)`.
    SqrtSumAbs,
    /// `sum x_i^2`.
    SumSquares,
    /// `sum sgn(x_i) sqrt(|x_i|)`.
    SignedSqrtSum,
    /// `1(|x| >= threshold)`.
    IndicatorNormGe {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// `x_index` (0-based).
    Coordinate { index: usize },
    /// A generator extra column raised to `power`.
    Extra {
        column: String,
        #[serde(default = "default_power")]
        power: i32,
    },
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditionalSpec {
    pub name: String,
    pub formula: Formula,
    #[serde(default)]
    pub noise_sd: f64,
}

impl AdditionalSpec {
    pub fn validate(&self, at: &str) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CarError::config(format!("{at}.name"), "name must be non-empty [A-Za-z0-9_]"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(CarError::config(format!("{at}.noise_sd"), "noise_sd must be finite and nonnegative"));
        }
        if let Formula::IndicatorNormGe { threshold } = &self.formula {
            if !threshold.is_finite() {
                return Err(CarError::config(format!("{at}.formula"), "threshold must be finite"));
            }
        }
        Ok(())
    }
}

/// A formula bound to a generator's raw and extra columns.
#[derive(Clone, Debug)]
pub struct BoundAdditional {
    kind: Bound,
    pub noise_sd: f64,
}

#[derive(Clone, Debug)]
enum Bound {
    SqrtSumAbs,
    SumSquares,
    SignedSqrtSum,
    IndicatorNormGe(f64),
    Coordinate(usize),
    Extra(usize, i32),
    Constant(f64),
}

impl BoundAdditional {
    pub fn bind(spec: &AdditionalSpec, raw_dim: usize, extra_names: &[String]) -> Result<Self> {
        let kind = match &spec.formula {
            Formula::SqrtSumAbs => Bound::SqrtSumAbs,
            Formula::SumSquares => Bound::SumSquares,
            Formula::SignedSqrtSum => Bound::SignedSqrtSum,
            Formula::IndicatorNormGe { threshold } => Bound::IndicatorNormGe(*threshold),
            Formula::Coordinate { index } if *index < raw_dim => Bound::Coordinate(*index),
            Formula::Coordinate { index } => {
                return Err(CarError::invalid(format!("{}: coordinate {index} out of range for {raw_dim} covariates", spec.name)))
            }
            Formula::Extra { column, power } => {
                let i = extra_names
                    .iter()
                    .position(|n| n == column)
                    .ok_or_else(|| CarError::invalid(format!("{}: generator has no extra column {column:?}", spec.name)))?;
                Bound::Extra(i, *power)
            }
            Formula::Constant { value } => Bound::Constant(*value),
        };
        Ok(BoundAdditional { kind, noise_sd: spec.noise_sd })
    }

    /// `f(x)` without noise.
    pub fn eval(&self, x: &[f64], extra: &[f64]) -> f64 {
        match self.kind {
            Bound::SqrtSumAbs => x.iter().map(|v| v.abs()).sum::<f64>().sqrt(),
            Bound::SumSquares => x.iter().map(|v| v * v).sum(),
            Bound::SignedSqrtSum => x.iter().map(|v| v.signum() * v.abs().sqrt()).sum(),
            Bound::IndicatorNormGe(t) => {
                if x.iter().map(|v| v * v).sum::<f64>().sqrt() >= t {
                    1.0
                } else {
                    0.0
                }
            }
            Bound::Coordinate(i) => x[i],
            Bound::Extra(i, p) => extra[i].powi(p),
            Bound::Constant(c) => c,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(f: Formula) -> BoundAdditional {
        BoundAdditional::bind(
            &AdditionalSpec {
                name: "y".into(),
                formula: f,
                noise_sd: 0.0,
            },
            3,
            &["h".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn formulas() {
        let x = [4.0, -9.0, 0.0];
        assert_eq!(bind(Formula::SqrtSumAbs).eval(&x, &[2.0]), 13f64.sqrt());
        assert_eq!(bind(Formula::SumSquares).eval(&x, &[2.0]), 97.0);
        assert_eq!(bind(Formula::SignedSqrtSum).eval(&x, &[2.0]), -1.0);
        assert_eq!(bind(Formula::IndicatorNormGe { threshold: 9.5 }).eval(&x, &[]), 1.0);
        assert_eq!(bind(Formula::IndicatorNormGe { threshold: 10.0 }).eval(&x, &[]), 0.0);
        assert_eq!(bind(Formula::Coordinate { index: 1 }).eval(&x, &[]), -9.0);
        assert_eq!(bind(Formula::Extra { column: "h".into(), power: 2 }).eval(&x, &[3.0]), 9.0);
    }

    #[test]
    fn serde_shape() {
        let s: AdditionalSpec = serde_json::from_str(r#"{"name":"y","formula":"sum_squares"}"#).unwrap();
        assert_eq!(s.formula, Formula::SumSquares);
        let s: AdditionalSpec = serde_json::from_str(r#"{"name":"f","formula":{"indicator_norm_ge":{}},"noise_sd":1}"#).unwrap();
        assert_eq!(s.formula, Formula::IndicatorNormGe { threshold: 4.0 });
        assert!(BoundAdditional::bind(&s, 3, &[]).is_ok());
        let bad = AdditionalSpec {
            name: "e".into(),
            formula: Formula::Extra { column: "q".into(), power: 1 },
            noise_sd: 0.0,
        };
        assert!(BoundAdditional::bind(&bad, 3, &[]).is_err());
    }
}
