//! Value types shared by every policy: the balanced covariate vector, the
//! target ratio, assignments and the running imbalance vector.

use serde::{Deserialize, Serialize};

use crate::error::{CarError, Result};
use crate::rng::RngStream;

/// The balanced covariate vector `X = phi(X_origin)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateVector(Vec<f64>);

impl CovariateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CarError::invalid("covariate vector must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CarError::invalid(format!(
                "covariate entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(CovariateVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for CovariateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Targeted allocation ratio for the treatment arm, strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct AllocationRatio(f64);

impl AllocationRatio {
    pub fn new(rho: f64) -> Result<Self> {
        if rho.is_finite() && rho > 0.0 && rho < 1.0 {
            Ok(AllocationRatio(rho))
        } else {
            Err(CarError::invalid(format!("allocation ratio must satisfy 0 < rho < 1, got {rho}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    /// `T_i` as a real number.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Control => 0.0,
            Arm::Treatment => 1.0,
        }
    }

    pub fn is_treatment(self) -> bool {
        self == Arm::Treatment
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        match a {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treatment),
            other => Err(format!("arm must be 0 or 1, got {other}")),
        }
    }
}

/// One realised coin flip. `arm` is treatment iff `uniform_draw < prob_used`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub arm: Arm,
    pub prob_used: f64,
    pub uniform_draw: f64,
}

impl Assignment {
    /// Decide an arm from an already drawn uniform; used by replay.
    pub fn from_draw(prob: f64, uniform_draw: f64) -> Result<Self> {
        check_probability(prob)?;
        if !(0.0..1.0).contains(&uniform_draw) {
            return Err(CarError::invalid(format!("uniform draw must lie in [0, 1), got {uniform_draw}")));
        }
        let arm = if uniform_draw < prob { Arm::Treatment } else { Arm::Control };
        Ok(Assignment {
            arm,
            prob_used: prob,
            uniform_draw,
        })
    }
}

fn check_probability(prob: f64) -> Result<()> {
    if (0.0..=1.0).contains(&prob) {
        Ok(())
    } else {
        Err(CarError::invalid(format!("probability must lie in [0, 1], got {prob}")))
    }
}

/// Draw a treatment assignment with probability `prob`.
pub fn draw_assignment(prob: f64, rng: &mut RngStream) -> Result<Assignment> {
    check_probability(prob)?;
    let u = rng.uniform();
    Assignment::from_draw(prob, u)
}

/// Running imbalance `lambda_n = sum_{i<=n} (T_i - rho) X_i` with unit counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceState {
    pub lambda: Vec<f64>,
    pub n: u64,
    pub n_treat: u64,
}

impl ImbalanceState {
    pub fn new(dim: usize) -> Self {
        ImbalanceState {
            lambda: vec![0.0; dim],
            n: 0,
            n_treat: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_control(&self) -> u64 {
        self.n - self.n_treat
    }

    /// In-place form of [`imbalance_update`].
    pub fn record(&mut self, x: &[f64], arm: Arm, rho: f64) -> Result<()> {
        if x.len() != self.lambda.len() {
            return Err(CarError::invalid(format!(
                "dimension mismatch: state has {} coordinates, covariate has {}",
                self.lambda.len(),
                x.len()
            )));
        }
        let step = arm.indicator() - rho;
        for (l, xi) in self.lambda.iter_mut().zip(x) {
            *l += step * xi;
        }
        self.n += 1;
        if arm.is_treatment() {
            self.n_treat += 1;
        }
        Ok(())
    }

    /// Imbalance after hypothetically assigning `x` to `arm`, without
    /// touching the state.
    pub fn preview(&self, x: &[f64], arm: Arm, rho: f64) -> Vec<f64> {
        let step = arm.indicator() - rho;
        self.lambda.iter().zip(x).map(|(l, xi)| l + step * xi).collect()
    }

    /// Recompute lambda from a full history.
    pub fn from_history<'a>(dim: usize, rho: f64, history: impl IntoIterator<Item = (&'a [f64], Arm)>) -> Result<Self> {
        let mut s = ImbalanceState::new(dim);
        for (x, arm) in history {
            s.record(x, arm, rho)?;
        }
        Ok(s)
    }
}

/// `lambda' = lambda + (arm - rho) x`, `n' = n + 1`.
pub fn imbalance_update(state: &ImbalanceState, x: &CovariateVector, arm: Arm, rho: AllocationRatio) -> Result<ImbalanceState> {
    let mut next = state.clone();
    next.record(x.as_slice(), arm, rho.get())?;
    Ok(next)
}
