//! Tunable parameters for a cycle run.
//!
//! Every knob has a default so that config files only need to name what they change.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::risk_model::GroupId;

pub const DEFAULT_LIKELIHOOD_THRESHOLD: f64 = 0.005;
pub const DEFAULT_AGGREGATION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_DISCOUNT_RATE: f64 = 0.05;
pub const DEFAULT_HARDSHIP_MULTIPLIER: f64 = 1.5;
pub const DEFAULT_STEP1_EXACT_LIMIT: usize = 20;
pub const DEFAULT_STEP2_EXACT_LIMIT: usize = 16;
pub const DEFAULT_RESTARTS: usize = 24;

/// Appraisal perspective used by the Step-2 objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AppraisalMode {
    /// Budget lines of the deciding administration only: action costs, premiums,
    /// and compensation of uninsured losses at face value.
    Financial,
    /// Adds the indirect burden of uncompensated losses via the hardship multiplier.
    #[default]
    Economic,
    /// Economic plus per-income-group equity weights.
    Social,
}

impl AppraisalMode {
    pub const ALL: [AppraisalMode; 3] = [AppraisalMode::Financial, AppraisalMode::Economic, AppraisalMode::Social];

    pub fn as_str(self) -> &'static str {
        match self {
            AppraisalMode::Financial => "financial",
            AppraisalMode::Economic => "economic",
            AppraisalMode::Social => "social",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppraisalConfig {
    #[serde(default)]
    pub mode: AppraisalMode,
    /// Only consulted in social mode; a missing group weighs 1.
    #[serde(default)]
    pub equity_weights: BTreeMap<GroupId, f64>,
    #[serde(default = "default_hardship")]
    pub hardship_multiplier: f64,
    #[serde(default = "default_discount_rate")]
    pub discount_rate: f64,
}

impl Default for AppraisalConfig {
    fn default() -> Self {
        AppraisalConfig {
            mode: AppraisalMode::default(),
            equity_weights: BTreeMap::new(),
            hardship_multiplier: DEFAULT_HARDSHIP_MULTIPLIER,
            discount_rate: DEFAULT_DISCOUNT_RATE,
        }
    }
}

impl AppraisalConfig {
    /// Equity weight in effect for a group under this config's mode.
    pub fn weight(&self, group: &str) -> f64 {
        match self.mode {
            AppraisalMode::Social => self.equity_weights.get(group).copied().unwrap_or(1.0),
            _ => 1.0,
        }
    }

    pub fn with_mode(&self, mode: AppraisalMode) -> AppraisalConfig {
        AppraisalConfig { mode, ..self.clone() }
    }
}

/// Search controls shared by both optimization steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOptions {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step1_limit")]
    pub step1_exact_limit: usize,
    #[serde(default = "default_step2_limit")]
    pub step2_exact_limit: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            seed: 0,
            step1_exact_limit: DEFAULT_STEP1_EXACT_LIMIT,
            step2_exact_limit: DEFAULT_STEP2_EXACT_LIMIT,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleConfig {
    /// Events at or below this annual probability are retained by default.
    #[serde(default = "default_likelihood")]
    pub likelihood_threshold: f64,
    /// Fraction of groups voting intolerable at which a loss becomes intolerable.
    #[serde(default = "default_aggregation")]
    pub aggregation_threshold: f64,
    /// Residual fraction at or below which an intolerable loss counts as eliminated.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub appraisal: AppraisalConfig,
    #[serde(default)]
    pub search: SearchOptions,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            likelihood_threshold: DEFAULT_LIKELIHOOD_THRESHOLD,
            aggregation_threshold: DEFAULT_AGGREGATION_THRESHOLD,
            epsilon: DEFAULT_EPSILON,
            appraisal: AppraisalConfig::default(),
            search: SearchOptions::default(),
        }
    }
}

fn default_hardship() -> f64 {
    DEFAULT_HARDSHIP_MULTIPLIER
}
fn default_discount_rate() -> f64 {
    DEFAULT_DISCOUNT_RATE
}
fn default_likelihood() -> f64 {
    DEFAULT_LIKELIHOOD_THRESHOLD
}
fn default_aggregation() -> f64 {
    DEFAULT_AGGREGATION_THRESHOLD
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_step1_limit() -> usize {
    DEFAULT_STEP1_EXACT_LIMIT
}
fn default_step2_limit() -> usize {
    DEFAULT_STEP2_EXACT_LIMIT
}
fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
