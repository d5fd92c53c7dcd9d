//! Allocation functions `g(lambda, x)` and their configuration.

mod chain;
pub mod feasible;
pub mod linalg;
pub mod minimization;

use serde::{Deserialize, Serialize};

pub use chain::FixedAllocation;
pub use feasible::{alpha, beta, cutsin, epsilon_of_theta, feasible_prob, tau, update_parameter, FeasibleComponents, ParameterMatrix};
pub use minimization::{cr_prob, ps_discrete_prob, ps_imbalance_difference, rmm_difference, rmm_prob, ImbKind, MarginUpdate, WeightPlacement};

use crate::error::{CarError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    /// `1(x_i > 0) - 1(x_i < 0)`.
    #[default]
    Sign,
    /// `x_i / |x|_inf`.
    LinfNormalized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    #[default]
    Computed,
    FixedZero,
}

/// Where the feasible procedure gets theta from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThetaSpec {
    /// Running mean of `alpha_i(X_j) X_j` over enrolled units.
    #[default]
    Adaptive,
    Fixed { xis: Vec<Vec<f64>> },
    /// `E[alpha_i(X) X]` under the experiment's generator; resolved by the
    /// simulation lab before any allocation happens.
    Oracle {
        #[serde(default)]
        n_mc: Option<usize>,
    },
}

fn default_warmup_threshold() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleConfig {
    pub p: f64,
    #[serde(default)]
    pub alpha_kind: AlphaKind,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
    #[serde(default = "default_warmup_threshold")]
    pub warmup_threshold: u64,
    #[serde(default)]
    pub theta: ThetaSpec,
}

impl FeasibleConfig {
    pub fn new(p: f64) -> Self {
        FeasibleConfig {
            p,
            alpha_kind: AlphaKind::Sign,
            epsilon_mode: EpsilonMode::Computed,
            warmup_threshold: default_warmup_threshold(),
            theta: ThetaSpec::Adaptive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    CompleteRandomization,
    /// Biased-coin minimization of `|lambda|^2`.
    Minimization { rho1: f64 },
    /// Biased-coin Pocock–Simon minimization over discrete margins. Levels and
    /// weights come from the trial's discrete feature map.
    PocockSimon {
        rho1: f64,
        imb_kind: ImbKind,
        #[serde(default)]
        margin_update: MarginUpdate,
        #[serde(default)]
        weight_placement: WeightPlacement,
    },
    Feasible(FeasibleConfig),
}

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            PolicySpec::CompleteRandomization => "complete_randomization",
            PolicySpec::Minimization { .. } => "minimization",
            PolicySpec::PocockSimon { .. } => "pocock_simon",
            PolicySpec::Feasible(_) => "feasible",
        }
    }

    /// Units allocated with plain `rho` before the policy takes over.
    pub fn default_warmup(&self) -> u64 {
        match self {
            PolicySpec::CompleteRandomization => 0,
            PolicySpec::Minimization { .. } | PolicySpec::PocockSimon { .. } => 1,
            PolicySpec::Feasible(c) => c.warmup_threshold,
        }
    }

    /// Check hyperparameters against `rho`. `path` prefixes error locations.
    pub fn validate(&self, rho: f64, path: &str) -> Result<()> {
        match self {
            PolicySpec::CompleteRandomization => Ok(()),
            PolicySpec::Minimization { rho1 } | PolicySpec::PocockSimon { rho1, .. } => {
                let lo = rho.max(1.0 - rho);
                if !(rho1.is_finite() && *rho1 > lo && *rho1 < 1.0) {
                    return Err(CarError::config(
                        format!("{path}.rho1"),
                        format!("max(ρ,1−ρ) < rho1 < 1 violated (rho1={rho1}, rho={rho})"),
                    ));
                }
                Ok(())
            }
            PolicySpec::Feasible(c) => {
                let hi = rho.min(1.0 - rho);
                if !(c.p.is_finite() && c.p > 0.0 && c.p < hi) {
                    return Err(CarError::config(
                        format!("{path}.p"),
                        format!("0 < p < min(ρ,1−ρ) violated (p={}, rho={rho})", c.p),
                    ));
                }
                if let ThetaSpec::Fixed { xis } = &c.theta {
                    ParameterMatrix::new(xis.clone()).map_err(|e| CarError::config(format!("{path}.theta.xis"), e.to_string()))?;
                }
                if let ThetaSpec::Oracle { n_mc: Some(n) } = &c.theta {
                    if *n < 10_000 {
                        return Err(CarError::config(format!("{path}.theta.n_mc"), format!("n_mc must be at least 10000, got {n}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Range `[lo, hi]` every probability returned by this policy lies in.
    pub fn probability_bounds(&self, rho: f64) -> (f64, f64) {
        match self {
            PolicySpec::CompleteRandomization => (rho, rho),
            PolicySpec::Minimization { rho1 } | PolicySpec::PocockSimon { rho1, .. } => ((1.0 - rho1).min(rho), rho1.max(rho)),
            PolicySpec::Feasible(c) => (rho - c.p, rho + c.p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_constraint_is_named() {
        let spec = PolicySpec::Feasible(FeasibleConfig::new(0.5));
        let err = spec.validate(2.0 / 3.0, "policies[0]").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0 < p < min(ρ,1−ρ)"), "{msg}");
        assert!(msg.contains("policies[0].p"), "{msg}");
        assert!(PolicySpec::Feasible(FeasibleConfig::new(0.2)).validate(2.0 / 3.0, "").is_ok());
    }

    #[test]
    fn rho1_constraint() {
        assert!(PolicySpec::Minimization { rho1: 0.6 }.validate(2.0 / 3.0, "p").is_err());
        assert!(PolicySpec::Minimization { rho1: 1.0 }.validate(2.0 / 3.0, "p").is_err());
        assert!(PolicySpec::Minimization { rho1: 0.9 }.validate(2.0 / 3.0, "p").is_ok());
    }

    #[test]
    fn serde_shapes() {
        let s: PolicySpec = serde_json::from_str(r#"{"kind":"feasible","p":0.2}"#).unwrap();
        match &s {
            PolicySpec::Feasible(c) => {
                assert_eq!(c.warmup_threshold, 10);
                assert_eq!(c.theta, ThetaSpec::Adaptive);
            }
            _ => panic!(),
        }
        let s: PolicySpec = serde_json::from_str(r#"{"kind":"pocock_simon","rho1":0.99,"imb_kind":"abs"}"#).unwrap();
        assert_eq!(s.default_warmup(), 1);
        let s: PolicySpec = serde_json::from_str(r#"{"kind":"feasible","p":0.2,"epsilon_mode":"fixed_zero","theta":{"mode":"oracle"}}"#).unwrap();
        assert!(matches!(s, PolicySpec::Feasible(FeasibleConfig { theta: ThetaSpec::Oracle { n_mc: None }, .. })));
    }

    #[test]
    fn bounds_are_inside_unit_interval() {
        let rho = 2.0 / 3.0;
        for spec in [
            PolicySpec::CompleteRandomization,
            PolicySpec::Minimization { rho1: 0.9 },
            PolicySpec::Feasible(FeasibleConfig::new(0.2)),
        ] {
            let (lo, hi) = spec.probability_bounds(rho);
            assert!(lo > 0.0 && hi < 1.0);
        }
    }
}
