//! Prognostic-score pilot matching for observational studies.
//!
//! The crate covers the full design-and-analysis loop of a matched
//! observational study:
//!
//! * [`datagen`] simulates datasets with known propensity and prognostic scores,
//! * [`models`] fits logistic, least-squares and lasso score models,
//! * [`distance`] and [`matching`] build optimal without-replacement matchings
//!   (fixed ratio and full matching) on top of a min-cost-flow core in [`flow`],
//! * [`pilot`] holds aside a pilot set of controls to learn the prognostic score
//!   and matches the remaining analysis set jointly on both scores,
//! * [`estimate`] and [`sensitivity`] turn matchings into effect estimates and
//!   Rosenbaum Γ bounds,
//! * [`harness`] runs seeded Monte Carlo batches and aggregates them,
//! * [`acplot`] emits Assignment-Control plot data and SVG.

pub mod acplot;
pub mod dataset;
pub mod datagen;
pub mod distance;
pub mod error;
pub mod estimate;
pub mod flow;
pub mod harness;
pub mod matched;
pub mod matching;
pub mod models;
pub mod pilot;
pub mod rng;
pub mod sensitivity;

pub use dataset::{Dataset, TruthRecord};
pub use datagen::{Scenario, ScenarioSpec};
pub use distance::{DistanceMatrix, Features};
pub use error::{Error, Result};
pub use estimate::{EstimateResult, Estimator};
pub use harness::{AggregateMetrics, KValue, Method, ReplicateResult, SimConfig};
pub use matched::{FeatureSpace, MatchedSet, Matching, PilotSplit, Replacement};
pub use models::{ModelKind, ScoreModel};
pub use pilot::{MatchRatio, ModelSpec, PilotFit, PilotOptions, PilotRun};
pub use rng::RNG_ALGORITHM;
pub use sensitivity::SensitivityResult;

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
