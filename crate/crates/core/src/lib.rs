//! Tabular multi-class classifiers trained under a cross-model explanation
//! consistency constraint.
//!
//! The pipeline: per-factor Shapley attributions are computed for several
//! small classifiers, fused into a single importance distribution, and a
//! KL-divergence explanation loss pulls each model's own attribution
//! distribution toward the fused one during training. The [`eval`] module
//! drives the full with/without-knowledge k-fold experiment and reports
//! Macro/Micro-F1 plus pairwise Kendall-tau consistency.

pub mod attribution;
pub mod data;
pub mod eval;
pub mod knowledge;
pub mod models;
pub mod rng;
pub mod training;

pub use attribution::{AttributionTarget, AttributionVector, FactorRanking, ValueOracle};
pub use data::{FoldPlan, GroupSpec, SurveyTable, SynthConfig};
pub use eval::{ConfusionCounts, ExperimentConfig, ExperimentReport, KendallResult};
pub use knowledge::DomainKnowledge;
pub use models::{ClassifierSpec, ModelKind, ModelState};
pub use training::{LossMode, LossSpec, TrainConfig};

/// Crate version string stamped into artifact provenance blocks.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
