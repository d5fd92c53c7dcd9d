//! Covariate-adaptive randomization for two-arm sequential experiments.
//!
//! The crate is organised around the sequential allocation loop: a unit
//! arrives with raw covariates, a [`FeatureMap`] turns them into the balanced
//! vector `X`, an allocation policy turns `(theta, lambda, X)` into a
//! treatment probability, a uniform draw decides the arm and the running
//! imbalance `lambda = sum (T_i - rho) X_i` is updated.
//!
//! * [`imbalance`] and [`rng`] hold the shared value types.
//! * [`feature_maps`] implements identity/affine/polynomial and the discrete
//!   stratified, Pocock–Simon and Hu–Hu maps.
//! * [`policies`] holds every allocation function, including the shift-free
//!   feasible procedure with its running-mean parameter.
//! * [`engine`] owns live trial state and the JSON Lines event log.
//! * [`simlab`] is the Monte Carlo harness and the chain diagnostics.
//! * [`config`] is the JSON schema shared by the CLI and the HTTP service.

pub mod config;
pub mod engine;
pub mod error;
pub mod feature_maps;
pub mod imbalance;
pub mod policies;
pub mod rng;
pub mod simlab;

pub use config::{ExperimentConfig, PolicyEntry, Ratio, TrialConfig};
pub use engine::{AllocationEvent, Snapshot, ThetaSummary, TrialState, UnitRecord, WhatIf};
pub use error::{CarError, Result};
pub use feature_maps::{DiscreteScheme, FeatureMap};
pub use imbalance::{draw_assignment, imbalance_update, AllocationRatio, Arm, Assignment, CovariateVector, ImbalanceState};
pub use policies::{AlphaKind, EpsilonMode, FeasibleConfig, ImbKind, ParameterMatrix, PolicySpec};
pub use rng::RngStream;
