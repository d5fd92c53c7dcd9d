//! Chain diagnostics under a frozen allocation function: one-step drift of
//! `|lambda|` and the long-run conditional treatment ratio.

use serde::{Deserialize, Serialize};

use super::generators::Generator;
use super::oracle::{oracle_parameter, OracleEstimate, DEFAULT_N_MC};
use super::runner::{run_experiment, RunOptions, ORACLE_SALT};
use super::stats::{batch_means, normality_check, NormalityReport};
use crate::config::ExperimentConfig;
use crate::error::{CarError, Result};
use crate::feature_maps::FeatureMap;
use crate::imbalance::Assignment;
use crate::policies::{FixedAllocation, PolicySpec, ThetaSpec};
use crate::rng::RngStream;

const DRIFT_SALT: u64 = 0x0064_7269_6674;
const CHAIN_SALT: u64 = 0x0063_6861_696e;
const BATCHES: usize = 50;

/// Replace adaptive or oracle theta by `theta*` so the allocation function
/// no longer changes over time.
pub fn freeze_policy(spec: &PolicySpec, gen: &Generator, map: &FeatureMap, seed: u64) -> Result<(PolicySpec, Option<OracleEstimate>)> {
    let mut spec = spec.clone();
    let mut oracle = None;
    if let PolicySpec::Feasible(c) = &mut spec {
        let n_mc = match c.theta {
            ThetaSpec::Fixed { .. } => None,
            ThetaSpec::Adaptive => Some(DEFAULT_N_MC),
            ThetaSpec::Oracle { n_mc } => Some(n_mc.unwrap_or(DEFAULT_N_MC)),
        };
        if let Some(n_mc) = n_mc {
            let mut rng = RngStream::new(seed, 0).sibling(ORACLE_SALT);
            let est = oracle_parameter(gen, map, c.alpha_kind, n_mc, &mut rng)?;
            c.theta = ThetaSpec::Fixed {
                xis: est.theta.xis.clone(),
            };
            oracle = Some(est);
        }
    }
    Ok((spec, oracle))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub radius: f64,
    /// Largest estimated drift over the sampled directions.
    pub max_drift: f64,
    /// Monte Carlo standard error of that estimate.
    pub se: f64,
    pub direction: Vec<f64>,
    /// `max_drift + 3 se < 0`.
    pub negative: bool,
}

fn draw_mapped(gen: &Generator, map: &FeatureMap, count: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    let mut cur = gen.cursor(rng);
    let (mut raw, mut extra) = (Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if gen.max_units().is_some_and(|m| i % m == 0 && i > 0) {
            cur = gen.cursor(rng);
        }
        gen.draw(&mut cur, rng, &mut raw, &mut extra)?;
        let mut x = Vec::new();
        map.apply_into(&raw, &mut x)?;
        out.push(x);
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the span of `vs` by modified Gram–Schmidt.
pub fn span_basis(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = vs.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max).max(1.0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let n = dot(&w, &w).sqrt();
        if n > 1e-9 * scale {
            basis.push(w.iter().map(|x| x / n).collect());
            if basis.len() == v.len() {
                break;
            }
        }
    }
    basis
}

/// Estimate `max_u E[(g(M u, X) - rho) X^T u]` for each radius `M`, over
/// `m_dir` random unit directions in the span of the covariate support and
/// `m_x` common covariate draws.
pub fn drift_check(
    alloc: &FixedAllocation,
    gen: &Generator,
    map: &FeatureMap,
    radii: &[f64],
    m_dir: usize,
    m_x: usize,
    rng: &mut RngStream,
) -> Result<Vec<DriftRow>> {
    if m_dir < 100 || m_x < 100 {
        return Err(CarError::invalid("drift check needs at least 100 directions and 100 covariate draws"));
    }
    let state_map = alloc.state_map(map);
    let xs = draw_mapped(gen, &state_map, m_x, rng)?;
    let basis = span_basis(&xs);
    let d = xs[0].len();
    let dirs: Vec<Vec<f64>> = (0..m_dir)
        .map(|_| {
            let mut u = vec![0.0; d];
            for b in &basis {
                let z = rng.standard_normal();
                for (ui, bi) in u.iter_mut().zip(b) {
                    *ui += z * bi;
                }
            }
            let n = dot(&u, &u).sqrt();
            u.iter().map(|v| v / n).collect()
        })
        .collect();
    let rho = alloc.rho();
    let mut rows = Vec::with_capacity(radii.len());
    let mut terms = vec![0.0; m_x];
    for &radius in radii {
        let mut best: Option<DriftRow> = None;
        for u in &dirs {
            let lambda: Vec<f64> = u.iter().map(|v| v * radius).collect();
            for (t, x) in terms.iter_mut().zip(&xs) {
                *t = (alloc.prob(&lambda, x) - rho) * dot(x, u);
            }
            let m = super::stats::mean(&terms);
            if best.as_ref().is_none_or(|b| m > b.max_drift) {
                let se = super::stats::sd(&terms) / (m_x as f64).sqrt();
                best = Some(DriftRow {
                    radius,
                    max_drift: m,
                    se,
                    direction: u.clone(),
                    negative: m + 3.0 * se < 0.0,
                });
            }
        }
        rows.push(best.expect("at least one direction"));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoTildeRow {
    /// Raw covariate record of the probe.
    pub probe: Vec<f64>,
    pub estimate: f64,
    /// Batch-means standard error.
    pub se: f64,
}

/// Long-run average of `g(lambda_t, x)` for each probe along one chain of
/// length `chain_length`, discarding the first `burn_in` states.
pub fn rho_tilde_estimate(
    alloc: &FixedAllocation,
    gen: &Generator,
    map: &FeatureMap,
    probes: &[Vec<f64>],
    chain_length: u64,
    burn_in: u64,
    rng: &mut RngStream,
) -> Result<Vec<RhoTildeRow>> {
    if chain_length < burn_in + 10_000 {
        return Err(CarError::invalid("chain_length - burn_in must be at least 10000"));
    }
    let state_map = alloc.state_map(map);
    let probe_x = probes
        .iter()
        .map(|p| {
            let mut x = Vec::new();
            state_map.apply_into(p, &mut x)?;
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    let rho = alloc.rho();
    let d = state_map.output_dim(gen.raw_dim());
    let mut lambda = vec![0.0; d];
    let mut cov_rng = rng.sibling(CHAIN_SALT);
    let mut cur = gen.cursor(&mut cov_rng);
    let (mut raw, mut extra, mut x) = (Vec::new(), Vec::new(), Vec::with_capacity(d));
    let kept = (chain_length - burn_in) as usize;
    let mut series = vec![Vec::with_capacity(kept); probes.len()];
    let mut drawn = 0usize;
    for t in 1..=chain_length {
        if gen.max_units().is_some_and(|m| drawn == m) {
            cur = gen.cursor(&mut cov_rng);
            drawn = 0;
        }
        gen.draw(&mut cur, &mut cov_rng, &mut raw, &mut extra)?;
        drawn += 1;
        state_map.apply_into(&raw, &mut x)?;
        let a = Assignment::from_draw(alloc.prob(&lambda, &x), rng.uniform())?;
        let step = a.arm.indicator() - rho;
        for (l, xi) in lambda.iter_mut().zip(&x) {
            *l += step * xi;
        }
        if t > burn_in {
            for (s, px) in series.iter_mut().zip(&probe_x) {
                s.push(alloc.prob(&lambda, px));
            }
        }
    }
    Ok(probes
        .iter()
        .zip(&series)
        .map(|(p, s)| {
            let (estimate, se) = batch_means(s, BATCHES);
            RhoTildeRow {
                probe: p.clone(),
                estimate,
                se,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnoseMode {
    Drift,
    Rhotilde,
    Normality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PolicyDiagnostics {
    Drift { rows: Vec<DriftRow> },
    Rhotilde { rows: Vec<RhoTildeRow> },
    Normality { stat: String, n: u64, report: NormalityReport },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsEntry {
    pub policy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(flatten)]
    pub result: PolicyDiagnostics,
}

/// Run one diagnostic for every policy of an experiment config.
pub fn run_diagnostics(config: &ExperimentConfig, mode: DiagnoseMode, opts: RunOptions) -> Result<Vec<DiagnosticsEntry>> {
    config.validate()?;
    let seed = opts.base_seed.unwrap_or(config.base_seed);
    let dg = &config.diagnostics;
    if mode == DiagnoseMode::Normality {
        let name = match &dg.normality_stat {
            Some(n) => n.clone(),
            None => config
                .additional
                .last()
                .map(|a| a.name.clone())
                .ok_or_else(|| CarError::config("additional", "normality check needs an additional covariate"))?,
        };
        let stat = format!("shift_{name}");
        let result = run_experiment(config, opts)?;
        let n = *result.sample_sizes.last().expect("non-empty");
        return result
            .policies
            .iter()
            .map(|p| {
                let v = result
                    .values(p, n, &stat)
                    .ok_or_else(|| CarError::config("diagnostics.normality_stat", format!("unknown additional covariate {name:?}")))?;
                Ok(DiagnosticsEntry {
                    policy: p.clone(),
                    theta: None,
                    result: PolicyDiagnostics::Normality {
                        stat: stat.clone(),
                        n,
                        report: normality_check(&v)?,
                    },
                })
            })
            .collect();
    }
    if mode == DiagnoseMode::Rhotilde && dg.probes.is_empty() {
        return Err(CarError::config("diagnostics.probes", "at least one probe is required"));
    }
    let gen = Generator::load(&config.generator)?;
    let rho = config.rho.get();
    config
        .policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (spec, _) = freeze_policy(&p.spec, &gen, &config.feature_map, seed)?;
            let alloc = FixedAllocation::from_spec(&spec, rho, &config.feature_map)?;
            let theta = match &spec {
                PolicySpec::Feasible(c) => match &c.theta {
                    ThetaSpec::Fixed { xis } => Some(xis.clone()),
                    _ => None,
                },
                _ => None,
            };
            let result = match mode {
                DiagnoseMode::Drift => {
                    let mut rng = RngStream::new(seed, i as u64).sibling(DRIFT_SALT);
                    PolicyDiagnostics::Drift {
                        rows: drift_check(&alloc, &gen, &config.feature_map, &dg.radii, dg.directions, dg.mc_draws, &mut rng)?,
                    }
                }
                DiagnoseMode::Rhotilde => {
                    let mut rng = RngStream::new(seed, i as u64).sibling(CHAIN_SALT);
                    PolicyDiagnostics::Rhotilde {
                        rows: rho_tilde_estimate(&alloc, &gen, &config.feature_map, &dg.probes, dg.chain_length, dg.burn_in, &mut rng)?,
                    }
                }
                DiagnoseMode::Normality => unreachable!(),
            };
            Ok(DiagnosticsEntry {
                policy: p.name.clone(),
                theta,
                result,
            })
        })
        .collect()
}
