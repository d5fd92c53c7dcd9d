//! Feature maps `phi` from raw covariate records to the balanced vector.
//!
//! Raw records are plain `f64` slices. Discrete maps read each entry as a
//! 1-based categorical level; strata are ordered lexicographically over
//! `(k_1, .., k_p)` with the last covariate varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{CarError, Result};
use crate::imbalance::{Arm, CovariateVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScheme {
    /// Number of levels `L_t` for each covariate.
    pub levels: Vec<usize>,
    /// Per-covariate marginal weights `w_{m,t}`; empty means all ones.
    #[serde(default)]
    pub weights_marginal: Vec<f64>,
    #[serde(default)]
    pub weight_overall: f64,
    #[serde(default)]
    pub weight_stratum: f64,
}

impl DiscreteScheme {
    pub fn new(levels: Vec<usize>, weights_marginal: Vec<f64>) -> Result<Self> {
        let s = DiscreteScheme {
            levels,
            weights_marginal,
            weight_overall: 0.0,
            weight_stratum: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(CarError::invalid("discrete scheme needs at least one covariate"));
        }
        if let Some(t) = self.levels.iter().position(|&l| l < 2) {
            return Err(CarError::invalid(format!("covariate {} must have at least 2 levels", t + 1)));
        }
        if !self.weights_marginal.is_empty() && self.weights_marginal.len() != self.levels.len() {
            return Err(CarError::invalid(format!(
                "weights_marginal has {} entries for {} covariates",
                self.weights_marginal.len(),
                self.levels.len()
            )));
        }
        let all = self
            .weights_marginal
            .iter()
            .chain([&self.weight_overall, &self.weight_stratum]);
        for w in all {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(CarError::invalid(format!("weights must be finite and nonnegative, got {w}")));
            }
        }
        Ok(())
    }

    pub fn covariates(&self) -> usize {
        self.levels.len()
    }

    pub fn marginal_weight(&self, t: usize) -> f64 {
        self.weights_marginal.get(t).copied().unwrap_or(1.0)
    }

    pub fn margin_cells(&self) -> usize {
        self.levels.iter().sum()
    }

    pub fn strata(&self) -> usize {
        self.levels.iter().product()
    }

    /// Offset of covariate `t`'s first cell in the concatenated margin block.
    pub fn margin_offset(&self, t: usize) -> usize {
        self.levels[..t].iter().sum()
    }

    /// Parse a raw record into 0-based levels.
    pub fn parse_levels(&self, raw: &[f64]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(raw.len());
        self.parse_levels_into(raw, &mut out)?;
        Ok(out)
    }

    pub fn parse_levels_into(&self, raw: &[f64], out: &mut Vec<usize>) -> Result<()> {
        if raw.len() != self.levels.len() {
            return Err(CarError::invalid(format!(
                "expected {} categorical covariates, got {}",
                self.levels.len(),
                raw.len()
            )));
        }
        out.clear();
        for (t, (&v, &l)) in raw.iter().zip(&self.levels).enumerate() {
            if v.fract() != 0.0 || v < 1.0 || v > l as f64 {
                return Err(CarError::invalid(format!(
                    "covariate {} level {v} out of range 1..={l}",
                    t + 1
                )));
            }
            out.push(v as usize - 1);
        }
        Ok(())
    }

    /// Lexicographic stratum index of 0-based levels.
    pub fn stratum_index(&self, levels: &[usize]) -> usize {
        levels
            .iter()
            .zip(&self.levels)
            .fold(0, |acc, (&k, &l)| acc * l + k)
    }

    /// 1-based level tuple for a stratum index; inverse of `stratum_index`.
    pub fn stratum_levels(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.levels.len()];
        for (slot, &l) in out.iter_mut().zip(&self.levels).rev() {
            *slot = index % l + 1;
            index /= l;
        }
        out
    }

    pub fn stratum_label(&self, index: usize) -> String {
        let parts: Vec<String> = self.stratum_levels(index).iter().map(|k| k.to_string()).collect();
        parts.join("_")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Identity,
    /// `(x - center) * scale` per coordinate.
    ScaledIdentity {
        scale: Vec<f64>,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `(x, x^2, .., x^degree)` as consecutive coordinate blocks.
    PolynomialMoments { degree: u32 },
    Stratified { scheme: DiscreteScheme },
    PocockSimon { scheme: DiscreteScheme },
    HuHu { scheme: DiscreteScheme },
}

impl FeatureMap {
    pub fn scheme(&self) -> Option<&DiscreteScheme> {
        match self {
            FeatureMap::Stratified { scheme } | FeatureMap::PocockSimon { scheme } | FeatureMap::HuHu { scheme } => Some(scheme),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureMap::Identity => Ok(()),
            FeatureMap::ScaledIdentity { scale, center } => {
                if scale.is_empty() {
                    return Err(CarError::invalid("scaled_identity needs a non-empty scale"));
                }
                if !center.is_empty() && center.len() != scale.len() {
                    return Err(CarError::invalid("scaled_identity center and scale lengths differ"));
                }
                if scale.iter().chain(center).any(|v| !v.is_finite()) {
                    return Err(CarError::invalid("scaled_identity parameters must be finite"));
                }
                Ok(())
            }
            FeatureMap::PolynomialMoments { degree } => {
                if *degree == 0 {
                    Err(CarError::invalid("polynomial degree must be at least 1"))
                } else {
                    Ok(())
                }
            }
            FeatureMap::Stratified { scheme } | FeatureMap::PocockSimon { scheme } | FeatureMap::HuHu { scheme } => scheme.validate(),
        }
    }

    /// Expected raw record length, when the map fixes it.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            FeatureMap::Identity | FeatureMap::PolynomialMoments { .. } => None,
            FeatureMap::ScaledIdentity { scale, .. } => Some(scale.len()),
            FeatureMap::Stratified { scheme } | FeatureMap::PocockSimon { scheme } | FeatureMap::HuHu { scheme } => Some(scheme.covariates()),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity | FeatureMap::ScaledIdentity { .. } => input_dim,
            FeatureMap::PolynomialMoments { degree } => input_dim * *degree as usize,
            FeatureMap::Stratified { scheme } => scheme.strata(),
            FeatureMap::PocockSimon { scheme } => scheme.margin_cells(),
            FeatureMap::HuHu { scheme } => 1 + scheme.margin_cells() + scheme.strata(),
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Result<CovariateVector> {
        let mut out = Vec::new();
        self.apply_into(raw, &mut out)?;
        CovariateVector::new(out)
    }

    /// Allocation-free form of [`FeatureMap::apply`] for hot loops.
    pub fn apply_into(&self, raw: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if raw.is_empty() {
            return Err(CarError::invalid("empty covariate record"));
        }
        if let Some(q) = self.input_dim() {
            if raw.len() != q {
                return Err(CarError::invalid(format!("expected {q} raw covariates, got {}", raw.len())));
            }
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(CarError::invalid("raw covariates must be finite"));
        }
        out.clear();
        match self {
            FeatureMap::Identity => out.extend_from_slice(raw),
            FeatureMap::ScaledIdentity { scale, center } => {
                for (i, (&v, &s)) in raw.iter().zip(scale).enumerate() {
                    let c = center.get(i).copied().unwrap_or(0.0);
                    out.push((v - c) * s);
                }
            }
            FeatureMap::PolynomialMoments { degree } => {
                for k in 1..=*degree as i32 {
                    out.extend(raw.iter().map(|v| v.powi(k)));
                }
            }
            FeatureMap::Stratified { scheme } => {
                let levels = scheme.parse_levels(raw)?;
                out.resize(scheme.strata(), 0.0);
                out[scheme.stratum_index(&levels)] = 1.0;
            }
            FeatureMap::PocockSimon { scheme } => {
                let levels = scheme.parse_levels(raw)?;
                push_margins(scheme, &levels, out);
            }
            FeatureMap::HuHu { scheme } => {
                let levels = scheme.parse_levels(raw)?;
                out.push(scheme.weight_overall.sqrt());
                push_margins(scheme, &levels, out);
                let base = out.len();
                out.resize(base + scheme.strata(), 0.0);
                out[base + scheme.stratum_index(&levels)] = scheme.weight_stratum.sqrt();
            }
        }
        Ok(())
    }
}

fn push_margins(scheme: &DiscreteScheme, levels: &[usize], out: &mut Vec<f64>) {
    for (t, (&k, &l)) in levels.iter().zip(&scheme.levels).enumerate() {
        let w = scheme.marginal_weight(t).sqrt();
        for j in 0..l {
            out.push(if j == k { w } else { 0.0 });
        }
    }
}

/// Per-cell treatment/total counts for a discrete design. Margins are
/// indexed by the concatenated cell layout of [`DiscreteScheme::margin_offset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginTable {
    pub margin_treat: Vec<u64>,
    pub margin_total: Vec<u64>,
    pub stratum_treat: Vec<u64>,
    pub stratum_total: Vec<u64>,
}

impl MarginTable {
    pub fn new(scheme: &DiscreteScheme) -> Self {
        MarginTable {
            margin_treat: vec![0; scheme.margin_cells()],
            margin_total: vec![0; scheme.margin_cells()],
            stratum_treat: vec![0; scheme.strata()],
            stratum_total: vec![0; scheme.strata()],
        }
    }

    pub fn record(&mut self, scheme: &DiscreteScheme, levels: &[usize], arm: Arm) {
        let t = arm.is_treatment() as u64;
        for (c, &k) in levels.iter().enumerate() {
            let cell = scheme.margin_offset(c) + k;
            self.margin_treat[cell] += t;
            self.margin_total[cell] += 1;
        }
        let s = scheme.stratum_index(levels);
        self.stratum_treat[s] += t;
        self.stratum_total[s] += 1;
    }

    /// `sum (T_i - rho)` over units in the cell.
    pub fn weighted(&self, cell: usize, rho: f64) -> f64 {
        self.margin_treat[cell] as f64 - rho * self.margin_total[cell] as f64
    }

    /// `#treatment - #control` in the cell.
    pub fn integer(&self, cell: usize) -> i64 {
        2 * self.margin_treat[cell] as i64 - self.margin_total[cell] as i64
    }

    pub fn stratum_weighted(&self, stratum: usize, rho: f64) -> f64 {
        self.stratum_treat[stratum] as f64 - rho * self.stratum_total[stratum] as f64
    }
}

/// Margin imbalances `D_n(t; k)` reported per covariate and level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginImbalances {
    /// `sum (T_i - rho) 1(level match)`.
    pub weighted: Vec<Vec<f64>>,
    /// Classical `#treatment - #control`; only reported when `rho = 1/2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integer: Option<Vec<Vec<i64>>>,
}

impl MarginImbalances {
    pub fn from_table(table: &MarginTable, scheme: &DiscreteScheme, rho: f64) -> Self {
        let mut weighted = Vec::with_capacity(scheme.covariates());
        let mut integer = Vec::with_capacity(scheme.covariates());
        for (t, &l) in scheme.levels.iter().enumerate() {
            let off = scheme.margin_offset(t);
            weighted.push((0..l).map(|k| table.weighted(off + k, rho)).collect());
            integer.push((0..l).map(|k| table.integer(off + k)).collect());
        }
        MarginImbalances {
            weighted,
            integer: (rho == 0.5).then_some(integer),
        }
    }
}

/// Margin imbalances of a full allocation history of raw level records.
pub fn margin_imbalances<'a>(
    history: impl IntoIterator<Item = (&'a [f64], Arm)>,
    scheme: &DiscreteScheme,
    rho: f64,
) -> Result<MarginImbalances> {
    let mut table = MarginTable::new(scheme);
    for (raw, arm) in history {
        let levels = scheme.parse_levels(raw)?;
        table.record(scheme, &levels, arm);
    }
    Ok(MarginImbalances::from_table(&table, scheme, rho))
}
