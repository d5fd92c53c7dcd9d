//! JSON schema for trials and experiments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CarError, Result};
use crate::feature_maps::FeatureMap;
use crate::policies::{ParameterMatrix, PolicySpec, ThetaSpec};
use crate::simlab::additional::{AdditionalSpec, BoundAdditional};
use crate::simlab::generators::GeneratorSpec;

/// A ratio written either as a JSON number or as an exact fraction string
/// such as `"2/3"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RatioRepr", into = "f64")]
pub struct Ratio(f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum RatioRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<RatioRepr> for Ratio {
    type Error = String;

    fn try_from(r: RatioRepr) -> std::result::Result<Self, String> {
        let v = match r {
            RatioRepr::Number(v) => v,
            RatioRepr::Text(s) => parse_fraction(&s)?,
        };
        if v.is_finite() && v > 0.0 && v < 1.0 {
            Ok(Ratio(v))
        } else {
            Err(format!("0 < rho < 1 violated (rho={v})"))
        }
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let bad = || format!("cannot parse ratio {s:?}");
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

impl From<Ratio> for f64 {
    fn from(r: Ratio) -> f64 {
        r.0
    }
}

impl Ratio {
    pub fn new(v: f64) -> Result<Self> {
        Ratio::try_from(RatioRepr::Number(v)).map_err(CarError::invalid)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CarError::config(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CarError::io(path, e))
}

/// Configuration of one live trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rho: Ratio,
    pub policy: PolicySpec,
    #[serde(default)]
    pub feature_map: FeatureMap,
    /// Raw covariate count; required unless the feature map fixes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    /// Overrides the policy's default warm-up length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
}

impl TrialConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrialConfig = parse_json(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn raw_dim(&self) -> Result<usize> {
        match (self.feature_map.input_dim(), self.covariates) {
            (Some(q), Some(c)) if q != c => Err(CarError::config("covariates", format!("feature map expects {q} raw covariates, config says {c}"))),
            (Some(q), _) => Ok(q),
            (None, Some(c)) if c > 0 => Ok(c),
            _ => Err(CarError::config("covariates", "raw covariate count is required for this feature map")),
        }
    }

    /// Dimension `d` of the balanced vector.
    pub fn dim(&self) -> Result<usize> {
        Ok(self.feature_map.output_dim(self.raw_dim()?))
    }

    pub fn warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| self.policy.default_warmup())
    }

    pub fn validate(&self) -> Result<()> {
        self.feature_map
            .validate()
            .map_err(|e| CarError::config("feature_map", e.to_string()))?;
        let d = self.dim()?;
        validate_policy(&self.policy, self.rho.get(), &self.feature_map, d, "policy")?;
        if let PolicySpec::Feasible(c) = &self.policy {
            if matches!(c.theta, ThetaSpec::Oracle { .. }) {
                return Err(CarError::config("policy.theta", "oracle theta needs a covariate generator; give fixed xis for a live trial"));
            }
        }
        Ok(())
    }
}

fn validate_policy(spec: &PolicySpec, rho: f64, map: &FeatureMap, d: usize, path: &str) -> Result<()> {
    spec.validate(rho, path)?;
    match spec {
        PolicySpec::PocockSimon { .. } if map.scheme().is_none() => Err(CarError::config(
            format!("{path}.kind"),
            "pocock_simon needs a discrete feature map (stratified, pocock_simon or hu_hu)",
        )),
        PolicySpec::Feasible(c) => {
            if let ThetaSpec::Fixed { xis } = &c.theta {
                let theta = ParameterMatrix::new(xis.clone()).map_err(|e| CarError::config(format!("{path}.theta.xis"), e.to_string()))?;
                if theta.dim() != d {
                    return Err(CarError::config(format!("{path}.theta.xis"), format!("theta must be {d}x{d} to match the balanced vector")));
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
}

impl PolicyEntry {
    pub fn warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| self.spec.default_warmup())
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    /// Emit `imb_x<i>` rows for every coordinate of lambda.
    #[serde(default = "yes")]
    pub lambda: bool,
    /// Emit `stratum_<k1>_<k2>..` rows (discrete feature maps only).
    #[serde(default)]
    pub strata: bool,
}

impl Default for ReportSpec {
    fn default() -> Self {
        ReportSpec { lambda: true, strata: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

fn default_radii() -> Vec<f64> {
    vec![10.0, 20.0, 50.0]
}
fn default_directions() -> usize {
    200
}
fn default_mc_draws() -> usize {
    2000
}
fn default_chain_length() -> u64 {
    200_000
}
fn default_burn_in() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSpec {
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    /// Raw covariate records probed by the long-run ratio estimate.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default = "default_chain_length")]
    pub chain_length: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    /// Additional covariate checked by the normality diagnostic; defaults to
    /// the last entry of `additional`.
    #[serde(default)]
    pub normality_stat: Option<String>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            radii: default_radii(),
            directions: default_directions(),
            mc_draws: default_mc_draws(),
            probes: Vec::new(),
            chain_length: default_chain_length(),
            burn_in: default_burn_in(),
            normality_stat: None,
        }
    }
}

/// A Monte Carlo experiment: every policy crossed with every sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rho: Ratio,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub feature_map: FeatureMap,
    pub policies: Vec<PolicyEntry>,
    pub sample_sizes: Vec<u64>,
    pub replications: usize,
    #[serde(default)]
    pub additional: Vec<AdditionalSpec>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub report: ReportSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = parse_json(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Load and validate; relative paths inside the config resolve against
    /// the config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = parse_json(&read_text(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        c.generator.resolve_paths(base);
        c.validate()?;
        Ok(c)
    }

    pub fn raw_dim(&self) -> usize {
        self.feature_map.input_dim().unwrap_or_else(|| self.generator.raw_dim())
    }

    pub fn dim(&self) -> usize {
        self.feature_map.output_dim(self.raw_dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate("generator")?;
        self.feature_map
            .validate()
            .map_err(|e| CarError::config("feature_map", e.to_string()))?;
        if let Some(q) = self.feature_map.input_dim() {
            if q != self.generator.raw_dim() {
                return Err(CarError::config(
                    "feature_map",
                    format!("feature map expects {q} raw covariates, generator emits {}", self.generator.raw_dim()),
                ));
            }
        }
        if self.policies.is_empty() {
            return Err(CarError::config("policies", "at least one policy is required"));
        }
        let d = self.dim();
        let rho = self.rho.get();
        for (i, p) in self.policies.iter().enumerate() {
            let path = format!("policies[{i}]");
            if p.name.trim().is_empty() {
                return Err(CarError::config(format!("{path}.name"), "policy name must be non-empty"));
            }
            if self.policies[..i].iter().any(|q| q.name == p.name) {
                return Err(CarError::config(format!("{path}.name"), format!("duplicate policy name {:?}", p.name)));
            }
            validate_policy(&p.spec, rho, &self.feature_map, d, &path)?;
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(CarError::config("sample_sizes", "sample sizes must be a non-empty list of positive integers"));
        }
        if self.replications < 2 {
            return Err(CarError::config("replications", format!("need at least 2 replications, got {}", self.replications)));
        }
        for (i, a) in self.additional.iter().enumerate() {
            let at = format!("additional[{i}]");
            a.validate(&at)?;
            BoundAdditional::bind(a, self.generator.raw_dim(), self.generator.extra_names())
                .map_err(|e| CarError::config(format!("{at}.formula"), e.to_string()))?;
            if self.additional[..i].iter().any(|b| b.name == a.name) {
                return Err(CarError::config(format!("{at}.name"), format!("duplicate additional covariate {:?}", a.name)));
            }
        }
        if self.report.strata && self.feature_map.scheme().is_none() && !self.generator.is_discrete() {
            return Err(CarError::config("report.strata", "stratum rows need a discrete generator or feature map"));
        }
        let dg = &self.diagnostics;
        if dg.directions < 100 || dg.mc_draws < 100 {
            return Err(CarError::config("diagnostics", "directions and mc_draws must both be at least 100"));
        }
        if dg.chain_length < dg.burn_in + 10_000 {
            return Err(CarError::config("diagnostics.chain_length", "chain_length - burn_in must be at least 10000"));
        }
        let q = self.raw_dim();
        if let Some((i, _)) = dg.probes.iter().enumerate().find(|(_, p)| p.len() != q) {
            return Err(CarError::config(format!("diagnostics.probes[{i}]"), format!("probe must have {q} raw coordinates")));
        }
        Ok(())
    }

    pub fn policy(&self, name: &str) -> Option<&PolicyEntry> {
        self.policies.iter().find(|p| p.name == name)
    }
}
