//! Fixtures shared by the benchmarks.

use car_core::policies::ThetaSpec;
use car_core::{ExperimentConfig, FeasibleConfig, FeatureMap, ParameterMatrix, PolicySpec, Ratio, RngStream, TrialConfig};

pub const RHO: f64 = 2.0 / 3.0;

/// Deterministic standard normal records of length `d`.
pub fn records(count: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..count).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect()
}

/// A well-conditioned `d x d` parameter with a little off-diagonal mass.
pub fn theta(d: usize) -> ParameterMatrix {
    let xis = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.1 * ((i + 2 * j) % 3) as f64 }).collect())
        .collect();
    ParameterMatrix::new(xis).expect("finite")
}

pub fn trial(policy: PolicySpec, d: usize) -> TrialConfig {
    TrialConfig {
        name: None,
        rho: Ratio::new(RHO).expect("valid ratio"),
        policy,
        feature_map: FeatureMap::Identity,
        covariates: Some(d),
        seed: 1,
        stream: 0,
        warmup: None,
    }
}

pub fn feasible(adaptive: bool, d: usize) -> PolicySpec {
    let mut c = FeasibleConfig::new(0.2);
    if !adaptive {
        c.theta = ThetaSpec::Fixed { xis: theta(d).xis };
    }
    PolicySpec::Feasible(c)
}

/// The continuous experiment with a handful of replications.
pub fn small_experiment(replications: usize, n: u64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "rho": "2/3",
            "generator": {{"kind": "table1_continuous"}},
            "policies": [
                {{"name": "CR", "kind": "complete_randomization"}},
                {{"name": "RMM", "kind": "minimization", "rho1": 0.9}},
                {{"name": "FR", "kind": "feasible", "p": 0.2}}
            ],
            "sample_sizes": [{n}],
            "replications": {replications},
            "additional": [{{"name": "sum_squares", "formula": "sum_squares"}}],
            "base_seed": 3
        }}"#
    ))
    .expect("bench config is valid")
}
