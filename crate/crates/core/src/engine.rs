//! The sequential allocation loop and its event log.

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use crate::config::TrialConfig;
use crate::error::{CarError, Result};
use crate::feature_maps::{DiscreteScheme, FeatureMap, MarginImbalances, MarginTable};
use crate::imbalance::{Arm, Assignment, ImbalanceState};
use crate::policies::feasible::update_parameter_in_place;
use crate::policies::minimization::{biased_coin, ps_imbalance_difference, rmm_prob};
use crate::policies::{AlphaKind, EpsilonMode, FeasibleComponents, ImbKind, MarginUpdate, ParameterMatrix, PolicySpec, ThetaSpec, WeightPlacement};
use crate::rng::{RngStream, StreamPosition};

#[derive(Clone, Debug)]
enum Kernel {
    Complete,
    Minimization {
        rho1: f64,
    },
    PocockSimon {
        rho1: f64,
        kind: ImbKind,
        update: MarginUpdate,
        placement: WeightPlacement,
    },
    Feasible {
        p: f64,
        alpha_kind: AlphaKind,
        mode: EpsilonMode,
        theta: ParameterMatrix,
        adaptive: bool,
        components: FeasibleComponents,
    },
}

/// Policy plus the state it reads: lambda, theta and discrete margins.
/// Holds no randomness; callers draw the uniforms.
#[derive(Clone, Debug)]
pub struct Allocator {
    rho: f64,
    warmup: u64,
    kernel: Kernel,
    imbalance: ImbalanceState,
    scheme: Option<DiscreteScheme>,
    margins: Option<MarginTable>,
    levels: Vec<usize>,
}

impl Allocator {
    /// `d` is the balanced-vector dimension. Oracle theta must already be
    /// resolved into a fixed one.
    pub fn new(rho: f64, policy: &PolicySpec, feature_map: &FeatureMap, d: usize, warmup: u64) -> Result<Self> {
        let kernel = match policy {
            PolicySpec::CompleteRandomization => Kernel::Complete,
            PolicySpec::Minimization { rho1 } => Kernel::Minimization { rho1: *rho1 },
            PolicySpec::PocockSimon {
                rho1,
                imb_kind,
                margin_update,
                weight_placement,
            } => {
                if feature_map.scheme().is_none() {
                    return Err(CarError::invalid("pocock_simon needs a discrete feature map"));
                }
                Kernel::PocockSimon {
                    rho1: *rho1,
                    kind: *imb_kind,
                    update: *margin_update,
                    placement: *weight_placement,
                }
            }
            PolicySpec::Feasible(c) => {
                let (theta, adaptive) = match &c.theta {
                    ThetaSpec::Adaptive => (ParameterMatrix::zeros(d), true),
                    ThetaSpec::Fixed { xis } => (ParameterMatrix::new(xis.clone())?, false),
                    ThetaSpec::Oracle { .. } => return Err(CarError::invalid("oracle theta must be resolved before allocation")),
                };
                if theta.dim() != d {
                    return Err(CarError::invalid(format!("theta is {}x{0}, balanced vector has {d} coordinates", theta.dim())));
                }
                let components = FeasibleComponents::new(&theta, c.epsilon_mode);
                Kernel::Feasible {
                    p: c.p,
                    alpha_kind: c.alpha_kind,
                    mode: c.epsilon_mode,
                    theta,
                    adaptive,
                    components,
                }
            }
        };
        let scheme = feature_map.scheme().cloned();
        let margins = scheme.as_ref().map(MarginTable::new);
        Ok(Allocator {
            rho,
            warmup,
            kernel,
            imbalance: ImbalanceState::new(d),
            scheme,
            margins,
            levels: Vec::new(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn warmup(&self) -> u64 {
        self.warmup
    }

    pub fn imbalance(&self) -> &ImbalanceState {
        &self.imbalance
    }

    pub fn margins(&self) -> Option<&MarginTable> {
        self.margins.as_ref()
    }

    pub fn scheme(&self) -> Option<&DiscreteScheme> {
        self.scheme.as_ref()
    }

    /// Current theta for feasible policies.
    pub fn theta(&self) -> Option<&ParameterMatrix> {
        match &self.kernel {
            Kernel::Feasible { theta, .. } => Some(theta),
            _ => None,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match &self.kernel {
            Kernel::Feasible { components, .. } => Some(components.epsilon),
            _ => None,
        }
    }

    /// Probability of treatment for the next unit, from the state as of
    /// before that unit.
    pub fn prob(&self, x_origin: &[f64], x: &[f64]) -> Result<f64> {
        if x.len() != self.imbalance.dim() {
            return Err(CarError::invalid(format!(
                "dimension mismatch: state has {} coordinates, covariate has {}",
                self.imbalance.dim(),
                x.len()
            )));
        }
        if self.imbalance.n < self.warmup {
            return Ok(self.rho);
        }
        let lambda = &self.imbalance.lambda;
        Ok(match &self.kernel {
            Kernel::Complete => self.rho,
            Kernel::Minimization { rho1 } => rmm_prob(lambda, x, self.rho, *rho1),
            Kernel::Feasible {
                p,
                alpha_kind,
                components,
                ..
            } => components.prob(self.rho, *p, *alpha_kind, lambda, x),
            Kernel::PocockSimon {
                rho1,
                kind,
                update,
                placement,
            } => {
                let scheme = self.scheme.as_ref().expect("checked in new");
                let table = self.margins.as_ref().expect("checked in new");
                let levels = scheme.parse_levels(x_origin)?;
                let mut own = Vec::with_capacity(levels.len());
                let mut weights = Vec::with_capacity(levels.len());
                for (t, &k) in levels.iter().enumerate() {
                    let cell = scheme.margin_offset(t) + k;
                    own.push(match update {
                        MarginUpdate::Ratio => table.weighted(cell, self.rho),
                        MarginUpdate::Unit => table.integer(cell) as f64,
                    });
                    weights.push(scheme.marginal_weight(t));
                }
                biased_coin(
                    ps_imbalance_difference(&own, &weights, self.rho, *kind, *update, *placement),
                    self.rho,
                    *rho1,
                )
            }
        })
    }

    /// Fold a unit into the state: lambda first, then theta (which ignores
    /// the arm), then the discrete margins.
    pub fn commit(&mut self, x_origin: &[f64], x: &[f64], arm: Arm) -> Result<()> {
        if let Some(scheme) = &self.scheme {
            scheme.parse_levels_into(x_origin, &mut self.levels)?;
        }
        let n_before = self.imbalance.n;
        self.imbalance.record(x, arm, self.rho)?;
        if let Kernel::Feasible {
            alpha_kind,
            mode,
            theta,
            adaptive: true,
            components,
            ..
        } = &mut self.kernel
        {
            update_parameter_in_place(theta, x, n_before, *alpha_kind);
            *components = FeasibleComponents::new(theta, *mode);
        }
        if let (Some(scheme), Some(table)) = (&self.scheme, &mut self.margins) {
            table.record(scheme, &self.levels, arm);
        }
        Ok(())
    }
}

/// One line of the JSON Lines event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationEvent {
    pub unit_index: u64,
    pub x_origin: Vec<f64>,
    pub x: Vec<f64>,
    pub prob: f64,
    pub u: f64,
    pub arm: Arm,
    pub lambda: Vec<f64>,
    #[serde(with = "rfc3339")]
    pub ts: DateTime<Utc>,
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

impl AllocationEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Parse a whole JSON Lines log. Blank lines are skipped.
pub fn parse_event_log(text: &str) -> Result<Vec<AllocationEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev = AllocationEvent::from_json_line(line).map_err(|e| CarError::CorruptLog {
            unit_index: out.len() as u64,
            message: format!("line {}: {e}", i + 1),
        })?;
        out.push(ev);
    }
    Ok(out)
}

/// Pure preview of the next allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub prob_treatment: f64,
    pub lambda_if_treat: Vec<f64>,
    pub lambda_if_control: Vec<f64>,
}

/// Everything a client may want to display about a trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub policy: String,
    pub rho: f64,
    pub n: u64,
    pub n_treat: u64,
    pub n_control: u64,
    pub lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<MarginImbalances>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub warmup_remaining: u64,
    pub rng: StreamPosition,
}

/// One incoming unit: either a bare array of raw covariates or
/// `{"x": [...], "u": 0.42}` with an optional external uniform draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnitRecord {
    Bare(Vec<f64>),
    Record {
        x: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        u: Option<f64>,
    },
}

impl UnitRecord {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|_| CarError::invalid("expected an array of numbers or an object {\"x\": [numbers], \"u\"?: number}"))
    }

    pub fn x(&self) -> &[f64] {
        match self {
            UnitRecord::Bare(x) | UnitRecord::Record { x, .. } => x,
        }
    }

    pub fn u(&self) -> Option<f64> {
        match self {
            UnitRecord::Bare(_) => None,
            UnitRecord::Record { u, .. } => *u,
        }
    }
}

/// Short theta description returned with each enrollment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    pub frobenius: f64,
    pub epsilon: f64,
}

/// A live trial: allocator, feature map and the assignment stream.
#[derive(Clone, Debug)]
pub struct TrialState {
    config: TrialConfig,
    raw_dim: usize,
    allocator: Allocator,
    rng: RngStream,
}

impl TrialState {
    pub fn new(config: TrialConfig) -> Result<Self> {
        config.validate()?;
        let raw_dim = config.raw_dim()?;
        let d = config.dim()?;
        let allocator = Allocator::new(config.rho.get(), &config.policy, &config.feature_map, d, config.warmup())?;
        let rng = RngStream::new(config.seed, config.stream);
        Ok(TrialState {
            config,
            raw_dim,
            allocator,
            rng,
        })
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    pub fn imbalance(&self) -> &ImbalanceState {
        self.allocator.imbalance()
    }

    pub fn theta(&self) -> Option<&ParameterMatrix> {
        self.allocator.theta()
    }

    pub fn n(&self) -> u64 {
        self.allocator.imbalance.n
    }

    pub fn rng_position(&self) -> StreamPosition {
        self.rng.position()
    }

    fn map(&self, x_origin: &[f64]) -> Result<Vec<f64>> {
        if x_origin.len() != self.raw_dim {
            return Err(CarError::invalid(format!("expected {} raw covariates, got {}", self.raw_dim, x_origin.len())));
        }
        let mut x = Vec::with_capacity(self.allocator.imbalance.dim());
        self.config.feature_map.apply_into(x_origin, &mut x)?;
        Ok(x)
    }

    pub fn whatif(&self, x_origin: &[f64]) -> Result<WhatIf> {
        let x = self.map(x_origin)?;
        let prob = self.allocator.prob(x_origin, &x)?;
        let state = &self.allocator.imbalance;
        Ok(WhatIf {
            prob_treatment: prob,
            lambda_if_treat: state.preview(&x, Arm::Treatment, self.allocator.rho),
            lambda_if_control: state.preview(&x, Arm::Control, self.allocator.rho),
        })
    }

    /// Enroll one unit using the trial's own stream.
    pub fn enroll(&mut self, x_origin: &[f64]) -> Result<(Assignment, AllocationEvent)> {
        self.enroll_with_draw(x_origin, None)
    }

    /// Enroll one unit. The stream always advances by one draw; `u`, when
    /// given, replaces the drawn value.
    pub fn enroll_with_draw(&mut self, x_origin: &[f64], u: Option<f64>) -> Result<(Assignment, AllocationEvent)> {
        let x = self.map(x_origin)?;
        let prob = self.allocator.prob(x_origin, &x)?;
        if let Some(u) = u {
            Assignment::from_draw(prob, u)?;
        }
        let drawn = self.rng.uniform();
        let a = Assignment::from_draw(prob, u.unwrap_or(drawn))?;
        let unit_index = self.n();
        self.allocator.commit(x_origin, &x, a.arm)?;
        let ev = AllocationEvent {
            unit_index,
            x_origin: x_origin.to_vec(),
            x,
            prob,
            u: a.uniform_draw,
            arm: a.arm,
            lambda: self.allocator.imbalance.lambda.clone(),
            ts: Utc::now().trunc_subsecs(3),
        };
        Ok((a, ev))
    }

    /// Check one logged event against the current state and fold it in.
    pub fn apply_event(&mut self, ev: &AllocationEvent) -> Result<()> {
        let n = self.n();
        let integrity = |message: String| CarError::Integrity { unit_index: n, message };
        if ev.unit_index != n {
            return Err(CarError::CorruptLog {
                unit_index: n,
                message: format!("expected unit_index {n}, found {}", ev.unit_index),
            });
        }
        let x = self.map(&ev.x_origin).map_err(|e| integrity(e.to_string()))?;
        if x != ev.x {
            return Err(integrity("logged x differs from the feature map of x_origin".into()));
        }
        let prob = self.allocator.prob(&ev.x_origin, &x)?;
        if prob.to_bits() != ev.prob.to_bits() {
            return Err(integrity(format!("logged prob {} but policy gives {prob}", ev.prob)));
        }
        let a = Assignment::from_draw(prob, ev.u).map_err(|e| integrity(e.to_string()))?;
        if a.arm != ev.arm {
            return Err(integrity(format!("arm {:?} inconsistent with u={} and prob={prob}", ev.arm, ev.u)));
        }
        self.rng.uniform();
        self.allocator.commit(&ev.x_origin, &x, a.arm)?;
        if self.allocator.imbalance.lambda != ev.lambda {
            return Err(integrity("logged lambda differs from the replayed imbalance".into()));
        }
        Ok(())
    }

    /// Rebuild a trial from its config and full log, verifying every event.
    pub fn replay<'a>(config: TrialConfig, events: impl IntoIterator<Item = &'a AllocationEvent>) -> Result<Self> {
        let mut state = TrialState::new(config)?;
        for ev in events {
            state.apply_event(ev)?;
        }
        Ok(state)
    }

    pub fn theta_summary(&self) -> Option<ThetaSummary> {
        Some(ThetaSummary {
            frobenius: self.allocator.theta()?.frobenius(),
            epsilon: self.allocator.epsilon()?,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        let a = &self.allocator;
        let s = &a.imbalance;
        let margins = match (a.scheme(), a.margins()) {
            (Some(scheme), Some(table)) => Some(MarginImbalances::from_table(table, scheme, a.rho)),
            _ => None,
        };
        Snapshot {
            policy: self.config.policy.label().to_string(),
            rho: a.rho,
            n: s.n,
            n_treat: s.n_treat,
            n_control: s.n_control(),
            lambda: s.lambda.clone(),
            margins,
            theta: a.theta().map(|t| t.xis.clone()),
            epsilon: a.epsilon(),
            warmup_remaining: a.warmup.saturating_sub(s.n),
            rng: self.rng.position(),
        }
    }
}

/// Timestamp format used in logs and API responses.
pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}
