use std::fmt;

use serde::{Deserialize, Serialize};

use crate::logits::LogitVector;
use crate::steering::spec::{Convention, SteeringSpec};

/// Generation is known to degrade outside this lambda range.
pub const RECOMMENDED_LAMBDA_MIN: f64 = -4.0;
pub const RECOMMENDED_LAMBDA_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Per-context weight bound for multi-context specs.
    pub mu_abs_max: f64,
    /// Bound on `max |combined logit|`.
    pub logit_abs_max: f64,
}

impl Default for StabilityBounds {
    fn default() -> Self {
        Self {
            lambda_min: RECOMMENDED_LAMBDA_MIN,
            lambda_max: RECOMMENDED_LAMBDA_MAX,
            mu_abs_max: 5.0,
            logit_abs_max: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StabilityWarning {
    LambdaOutOfRecommendedRange,
    LogitOverflowRisk,
}

impl fmt::Display for StabilityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabilityWarning::LambdaOutOfRecommendedRange => f.write_str("LambdaOutOfRecommendedRange"),
            StabilityWarning::LogitOverflowRisk => f.write_str("LogitOverflowRisk"),
        }
    }
}

pub fn spec_warnings(spec: &SteeringSpec, bounds: &StabilityBounds) -> Vec<StabilityWarning> {
    let out_of_range = match spec.convention() {
        Convention::SingleLambda { lambda } => lambda < bounds.lambda_min || lambda > bounds.lambda_max,
        Convention::MultiMu => spec.contexts().iter().any(|c| c.mu.abs() > bounds.mu_abs_max),
    };
    if out_of_range {
        vec![StabilityWarning::LambdaOutOfRecommendedRange]
    } else {
        Vec::new()
    }
}

/// Warnings never abort generation; they are attached to the trace.
pub fn stability_check_with(
    spec: &SteeringSpec,
    combined: &LogitVector,
    bounds: &StabilityBounds,
) -> Vec<StabilityWarning> {
    let mut out = spec_warnings(spec, bounds);
    if combined.max_abs() > bounds.logit_abs_max {
        out.push(StabilityWarning::LogitOverflowRisk);
    }
    out
}

pub fn stability_check(spec: &SteeringSpec, combined: &LogitVector) -> Vec<StabilityWarning> {
    stability_check_with(spec, combined, &StabilityBounds::default())
}
