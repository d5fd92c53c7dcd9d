//! Replication runner: every policy crossed with every sample size.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::additional::BoundAdditional;
use super::generators::Generator;
use super::oracle::{oracle_parameter, OracleEstimate, DEFAULT_N_MC};
use super::stats::{mean, sd, ShiftStat};
use crate::config::ExperimentConfig;
use crate::engine::Allocator;
use crate::error::{CarError, Result};
use crate::feature_maps::{DiscreteScheme, FeatureMap};
use crate::imbalance::Assignment;
use crate::policies::{PolicySpec, ThetaSpec};
use crate::rng::RngStream;

/// Salt for the covariate stream; assignments use the unsalted stream.
pub const COVARIATE_SALT: u64 = 0x636f_7661_7269_6174;
/// Salt for Monte Carlo oracle estimation.
pub const ORACLE_SALT: u64 = 0x6f72_6163_6c65;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub replications: Option<usize>,
    pub base_seed: Option<u64>,
}

/// A policy ready to allocate: oracle theta resolved into a fixed one.
#[derive(Clone, Debug)]
pub struct ResolvedPolicy {
    pub name: String,
    pub spec: PolicySpec,
    pub warmup: u64,
    pub oracle: Option<OracleEstimate>,
}

pub fn resolve_policies(config: &ExperimentConfig, gen: &Generator, base_seed: u64) -> Result<Vec<ResolvedPolicy>> {
    config
        .policies
        .iter()
        .map(|p| {
            let mut spec = p.spec.clone();
            let mut oracle = None;
            if let PolicySpec::Feasible(c) = &mut spec {
                if let ThetaSpec::Oracle { n_mc } = c.theta {
                    let mut rng = RngStream::new(base_seed, 0).sibling(ORACLE_SALT);
                    let est = oracle_parameter(gen, &config.feature_map, c.alpha_kind, n_mc.unwrap_or(DEFAULT_N_MC), &mut rng)?;
                    c.theta = ThetaSpec::Fixed {
                        xis: est.theta.xis.clone(),
                    };
                    oracle = Some(est);
                }
            }
            Ok(ResolvedPolicy {
                name: p.name.clone(),
                spec,
                warmup: p.warmup(),
                oracle,
            })
        })
        .collect()
}

/// Scheme used for per-stratum rows, if the design is discrete.
pub fn strata_scheme(config: &ExperimentConfig) -> Option<DiscreteScheme> {
    config.feature_map.scheme().cloned().or_else(|| {
        config
            .generator
            .is_discrete()
            .then(|| DiscreteScheme::new(vec![2, 3], Vec::new()).expect("valid levels"))
    })
}

struct Context<'a> {
    rho: f64,
    gen: Generator,
    map: &'a FeatureMap,
    d: usize,
    additional: Vec<BoundAdditional>,
    policies: Vec<ResolvedPolicy>,
    sizes: Vec<u64>,
    strata: Option<DiscreteScheme>,
    report_lambda: bool,
    base_seed: u64,
    n_stats: usize,
}

impl Context<'_> {
    /// One replication of one policy; returns `[size][stat]` flattened.
    fn replicate(&self, policy: usize, r: u64) -> Result<Vec<f64>> {
        let pol = &self.policies[policy];
        let mut alloc = Allocator::new(self.rho, &pol.spec, self.map, self.d, pol.warmup)?;
        let mut assign_rng = RngStream::new(self.base_seed, r);
        let mut cov_rng = assign_rng.sibling(COVARIATE_SALT);
        let mut cursor = self.gen.cursor(&mut cov_rng);
        let (mut raw, mut extra, mut x) = (Vec::new(), Vec::new(), Vec::with_capacity(self.d));
        let mut add_sums = vec![0.0; self.additional.len()];
        let mut strata_sums = vec![0.0; self.strata.as_ref().map_or(0, DiscreteScheme::strata)];
        let mut levels = Vec::new();
        let mut total = 0.0;
        let mut out = Vec::with_capacity(self.sizes.len() * self.n_stats);
        let mut next = 0;
        let last = *self.sizes.last().expect("validated non-empty");
        for n in 1..=last {
            self.gen.draw(&mut cursor, &mut cov_rng, &mut raw, &mut extra)?;
            self.map.apply_into(&raw, &mut x)?;
            let prob = alloc.prob(&raw, &x)?;
            let a = Assignment::from_draw(prob, assign_rng.uniform())?;
            alloc.commit(&raw, &x, a.arm)?;
            let step = a.arm.indicator() - self.rho;
            total += step;
            for (s, add) in add_sums.iter_mut().zip(&self.additional) {
                let mut y = add.eval(&raw, &extra);
                if add.noise_sd > 0.0 {
                    y += add.noise_sd * cov_rng.standard_normal();
                }
                *s += step * y;
            }
            if let Some(scheme) = &self.strata {
                scheme.parse_levels_into(&raw, &mut levels)?;
                strata_sums[scheme.stratum_index(&levels)] += step;
            }
            if n == self.sizes[next] {
                if self.report_lambda {
                    out.extend_from_slice(&alloc.imbalance().lambda);
                }
                out.push(total);
                out.extend_from_slice(&add_sums);
                out.extend_from_slice(&strata_sums);
                next += 1;
            }
        }
        Ok(out)
    }
}

/// Per-replication values for every (policy, n, stat) cell.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub policies: Vec<String>,
    pub sample_sizes: Vec<u64>,
    pub stats: Vec<String>,
    pub replications: usize,
    pub base_seed: u64,
    pub oracles: Vec<(String, OracleEstimate)>,
    /// `[policy][replication]` -> `[size][stat]` flattened.
    raw: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub n: u64,
    pub stat: String,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

impl ExperimentResult {
    fn index(&self, policy: &str, n: u64, stat: &str) -> Option<(usize, usize)> {
        let p = self.policies.iter().position(|q| q == policy)?;
        let i = self.sample_sizes.iter().position(|&m| m == n)?;
        let s = self.stats.iter().position(|q| q == stat)?;
        Some((p, i * self.stats.len() + s))
    }

    /// Replication values of one cell, in replication order.
    pub fn values(&self, policy: &str, n: u64, stat: &str) -> Option<Vec<f64>> {
        let (p, k) = self.index(policy, n, stat)?;
        Some(self.raw[p].iter().map(|v| v[k]).collect())
    }

    pub fn summary(&self, policy: &str, n: u64, stat: &str) -> Option<ShiftStat> {
        let v = self.values(policy, n, stat)?;
        let s = sd(&v);
        Some(ShiftStat {
            mean: mean(&v),
            sd: s,
            se: s / (v.len() as f64).sqrt(),
        })
    }

    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for p in &self.policies {
            for &n in &self.sample_sizes {
                for s in &self.stats {
                    let st = self.summary(p, n, s).expect("cell exists");
                    rows.push(SummaryRow {
                        policy: p.clone(),
                        n,
                        stat: s.clone(),
                        mean: st.mean,
                        sd: st.sd,
                        se: st.se,
                    });
                }
            }
        }
        rows
    }

    /// CSV with columns `policy,n,stat,mean,sd`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["policy", "n", "stat", "mean", "sd"])?;
        for r in self.rows() {
            wtr.write_record([r.policy, r.n.to_string(), r.stat, r.mean.to_string(), r.sd.to_string()])?;
        }
        wtr.flush().map_err(|e| CarError::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Machine-readable summary including standard errors and oracles.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "replications": self.replications,
            "base_seed": self.base_seed,
            "rows": self.rows(),
            "oracles": self.oracles.iter().map(|(n, o)| serde_json::json!({"policy": n, "theta": o.theta.xis, "se": o.se, "exact": o.exact})).collect::<Vec<_>>(),
        })
    }
}

/// Stat names in output order for a config.
pub fn stat_names(config: &ExperimentConfig) -> Vec<String> {
    let mut stats = Vec::new();
    if config.report.lambda {
        stats.extend((1..=config.dim()).map(|i| format!("imb_x{i}")));
    }
    stats.push("imb_total".to_string());
    stats.extend(config.additional.iter().map(|a| format!("shift_{}", a.name)));
    if config.report.strata {
        if let Some(s) = strata_scheme(config) {
            stats.extend((0..s.strata()).map(|k| format!("stratum_{}", s.stratum_label(k))));
        }
    }
    stats
}

pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentResult> {
    config.validate()?;
    let replications = opts.replications.unwrap_or(config.replications);
    if replications < 2 {
        return Err(CarError::config("replications", format!("need at least 2 replications, got {replications}")));
    }
    let base_seed = opts.base_seed.unwrap_or(config.base_seed);
    let gen = Generator::load(&config.generator)?;
    let mut sizes = config.sample_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if let Some(max) = gen.max_units() {
        let last = *sizes.last().expect("validated non-empty");
        if last as usize > max {
            return Err(CarError::config("sample_sizes", format!("largest sample size {last} exceeds the {max} available rows")));
        }
    }
    let additional = config
        .additional
        .iter()
        .map(|a| BoundAdditional::bind(a, gen.raw_dim(), gen.extra_names()))
        .collect::<Result<Vec<_>>>()?;
    let policies = resolve_policies(config, &gen, base_seed)?;
    let strata = if config.report.strata { strata_scheme(config) } else { None };
    let stats = stat_names(config);
    let ctx = Context {
        rho: config.rho.get(),
        gen,
        map: &config.feature_map,
        d: config.dim(),
        additional,
        policies,
        sizes: sizes.clone(),
        strata,
        report_lambda: config.report.lambda,
        base_seed,
        n_stats: stats.len(),
    };
    let np = ctx.policies.len();
    let flat: Vec<Vec<f64>> = (0..np * replications)
        .into_par_iter()
        .map(|k| ctx.replicate(k / replications, (k % replications) as u64))
        .collect::<Result<_>>()?;
    let mut raw = Vec::with_capacity(np);
    let mut it = flat.into_iter();
    for _ in 0..np {
        raw.push(it.by_ref().take(replications).collect());
    }
    Ok(ExperimentResult {
        policies: ctx.policies.iter().map(|p| p.name.clone()).collect(),
        sample_sizes: sizes,
        stats,
        replications,
        base_seed,
        oracles: ctx
            .policies
            .iter()
            .filter_map(|p| p.oracle.clone().map(|o| (p.name.clone(), o)))
            .collect(),
        raw,
    })
}

/// Per-stratum rows of a discrete Pocock–Simon study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub policy: String,
    pub n: u64,
    pub stratum: String,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

/// Run a discrete design and keep the per-stratum imbalance rows.
pub fn run_discrete_shift_study(config: &ExperimentConfig, opts: RunOptions) -> Result<(ExperimentResult, Vec<StratumRow>)> {
    if strata_scheme(config).is_none() {
        return Err(CarError::config("generator", "discrete shift study needs a discrete generator or feature map"));
    }
    let mut config = config.clone();
    config.report.strata = true;
    let result = run_experiment(&config, opts)?;
    let rows = result
        .rows()
        .into_iter()
        .filter_map(|r| {
            let label = r.stat.strip_prefix("stratum_")?.to_string();
            Some(StratumRow {
                policy: r.policy,
                n: r.n,
                stratum: label,
                mean: r.mean,
                sd: r.sd,
                se: r.se,
            })
        })
        .collect();
    Ok((result, rows))
}
