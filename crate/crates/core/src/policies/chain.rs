use super::feasible::{FeasibleComponents, ParameterMatrix};
use super::minimization::{biased_coin, ps_imbalance_difference, rmm_difference, ImbKind, MarginUpdate, WeightPlacement};
use super::{AlphaKind, PolicySpec, ThetaSpec};
use crate::error::{CarError, Result};
use crate::feature_maps::{DiscreteScheme, FeatureMap};

/// An allocation function with every parameter frozen, so that `lambda`
/// alone is the state of a Markov chain. Used by the drift and long-run
/// ratio diagnostics.
#[derive(Clone, Debug)]
pub enum FixedAllocation {
    Complete {
        rho: f64,
    },
    Minimization {
        rho: f64,
        rho1: f64,
    },
    Feasible {
        rho: f64,
        p: f64,
        alpha_kind: AlphaKind,
        components: FeasibleComponents,
    },
    /// Pocock–Simon on ratio margins. The chain state is the margin vector
    /// scaled cellwise by `scale[t]`, which makes the square measure a plain
    /// squared norm.
    PocockSimon {
        rho: f64,
        rho1: f64,
        kind: ImbKind,
        placement: WeightPlacement,
        scheme: DiscreteScheme,
        scale: Vec<f64>,
    },
}

impl FixedAllocation {
    pub fn from_spec(spec: &PolicySpec, rho: f64, feature_map: &FeatureMap) -> Result<Self> {
        Ok(match spec {
            PolicySpec::CompleteRandomization => FixedAllocation::Complete { rho },
            PolicySpec::Minimization { rho1 } => FixedAllocation::Minimization { rho, rho1: *rho1 },
            PolicySpec::Feasible(c) => {
                let theta = match &c.theta {
                    ThetaSpec::Fixed { xis } => ParameterMatrix::new(xis.clone())?,
                    _ => return Err(CarError::invalid("chain diagnostics need a fixed theta; resolve adaptive/oracle theta first")),
                };
                FixedAllocation::Feasible {
                    rho,
                    p: c.p,
                    alpha_kind: c.alpha_kind,
                    components: FeasibleComponents::new(&theta, c.epsilon_mode),
                }
            }
            PolicySpec::PocockSimon {
                rho1,
                imb_kind,
                margin_update,
                weight_placement,
            } => {
                if *margin_update != MarginUpdate::Ratio {
                    return Err(CarError::invalid("unit margin updates do not define a chain on lambda; use margin_update=ratio"));
                }
                let scheme = feature_map
                    .scheme()
                    .ok_or_else(|| CarError::invalid("pocock_simon needs a discrete feature map"))?
                    .clone();
                let scale = (0..scheme.covariates())
                    .map(|t| {
                        let w = scheme.marginal_weight(t);
                        match weight_placement {
                            WeightPlacement::Outside => w.sqrt(),
                            WeightPlacement::Inside => w,
                        }
                    })
                    .collect();
                FixedAllocation::PocockSimon {
                    rho,
                    rho1: *rho1,
                    kind: *imb_kind,
                    placement: *weight_placement,
                    scheme,
                    scale,
                }
            }
        })
    }

    pub fn rho(&self) -> f64 {
        match self {
            FixedAllocation::Complete { rho }
            | FixedAllocation::Minimization { rho, .. }
            | FixedAllocation::Feasible { rho, .. }
            | FixedAllocation::PocockSimon { rho, .. } => *rho,
        }
    }

    /// Feature map whose output is the chain's `x`. Identical to `base`
    /// except for Pocock–Simon, whose cells carry `scale[t]`.
    pub fn state_map(&self, base: &FeatureMap) -> FeatureMap {
        match self {
            FixedAllocation::PocockSimon { scheme, scale, .. } => {
                let mut s = scheme.clone();
                s.weights_marginal = scale.iter().map(|v| v * v).collect();
                FeatureMap::PocockSimon { scheme: s }
            }
            _ => base.clone(),
        }
    }

    pub fn prob(&self, lambda: &[f64], x: &[f64]) -> f64 {
        match self {
            FixedAllocation::Complete { rho } => *rho,
            FixedAllocation::Minimization { rho, rho1 } => biased_coin(rmm_difference(lambda, x, *rho), *rho, *rho1),
            FixedAllocation::Feasible {
                rho,
                p,
                alpha_kind,
                components,
            } => components.prob(*rho, *p, *alpha_kind, lambda, x),
            FixedAllocation::PocockSimon {
                rho,
                rho1,
                kind,
                placement,
                scheme,
                scale,
            } => {
                let p = scheme.covariates();
                let mut own = vec![0.0; p];
                let mut weights = vec![0.0; p];
                for t in 0..p {
                    weights[t] = scheme.marginal_weight(t);
                    if scale[t] == 0.0 {
                        continue;
                    }
                    let off = scheme.margin_offset(t);
                    if let Some(k) = (0..scheme.levels[t]).find(|&k| x[off + k] != 0.0) {
                        own[t] = lambda[off + k] / scale[t];
                    }
                }
                let diff = ps_imbalance_difference(&own, &weights, *rho, *kind, MarginUpdate::Ratio, *placement);
                biased_coin(diff, *rho, *rho1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_maps::MarginTable;
    use crate::imbalance::Arm;
    use crate::policies::ps_discrete_prob;

    #[test]
    fn pocock_simon_chain_matches_margin_table() {
        let scheme = DiscreteScheme::new(vec![2, 3], vec![1.0, 2.0]).unwrap();
        let base = FeatureMap::PocockSimon { scheme: scheme.clone() };
        let rho = 2.0 / 3.0;
        for placement in [WeightPlacement::Outside, WeightPlacement::Inside] {
            for kind in [ImbKind::Square, ImbKind::Abs] {
                let spec = PolicySpec::PocockSimon {
                    rho1: 0.99,
                    imb_kind: kind,
                    margin_update: MarginUpdate::Ratio,
                    weight_placement: placement,
                };
                let chain = FixedAllocation::from_spec(&spec, rho, &base).unwrap();
                let map = chain.state_map(&base);
                let mut table = MarginTable::new(&scheme);
                let mut lambda = vec![0.0; 5];
                let records = [[1.0, 2.0], [2.0, 3.0], [1.0, 1.0], [2.0, 2.0], [1.0, 2.0], [2.0, 1.0]];
                for (i, rec) in records.iter().cycle().take(40).enumerate() {
                    let levels = scheme.parse_levels(rec).unwrap();
                    let x = map.apply(rec).unwrap();
                    let own: Vec<f64> = levels.iter().enumerate().map(|(t, &k)| table.weighted(scheme.margin_offset(t) + k, rho)).collect();
                    let direct = ps_discrete_prob(&own, &[1.0, 2.0], rho, 0.99, kind, MarginUpdate::Ratio, placement);
                    assert_eq!(chain.prob(&lambda, x.as_slice()), direct, "step {i}");
                    let arm = if (i * 7) % 3 == 0 { Arm::Control } else { Arm::Treatment };
                    table.record(&scheme, &levels, arm);
                    for (l, v) in lambda.iter_mut().zip(x.as_slice()) {
                        *l += (arm.indicator() - rho) * v;
                    }
                }
            }
        }
    }

    #[test]
    fn feasible_chain_requires_fixed_theta() {
        let spec = PolicySpec::Feasible(super::super::FeasibleConfig::new(0.2));
        assert!(FixedAllocation::from_spec(&spec, 0.5, &FeatureMap::Identity).is_err());
    }
}
