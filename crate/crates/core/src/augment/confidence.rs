use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest threshold handed out, keeping `θ > 0` when every labeled SE is 0.
pub const MIN_THETA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryPolicy {
    /// `θ = mean + κ·std` of the labeled SE values (population std).
    KappaSigma { kappa: f64 },
    Fixed { theta: f64 },
}

impl Default for BoundaryPolicy {
    fn default() -> Self {
        BoundaryPolicy::KappaSigma { kappa: 3.0 }
    }
}

/// Threshold on per-mask reconstruction error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionBoundary {
    pub theta: f64,
}

impl DecisionBoundary {
    pub fn is_nontraversable(&self, se: f64) -> bool {
        se > self.theta
    }
}

/// Picks the boundary from the SE distribution of masks on traversed
/// terrain. The unlabeled values are accepted for policies that look at
/// both modes; the built-in ones do not.
pub fn select_decision_boundary(labeled: &[f64], _unlabeled: &[f64], policy: &BoundaryPolicy) -> Result<DecisionBoundary> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("labeled SE values"));
    }
    if labeled.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter("SE values must be finite and nonnegative".into()));
    }
    let theta = match *policy {
        BoundaryPolicy::KappaSigma { kappa } => {
            if !(kappa >= 0.0) {
                return Err(Error::InvalidParameter(format!("kappa {kappa}")));
            }
            let n = labeled.len() as f64;
            let mean = labeled.iter().sum::<f64>() / n;
            let var = labeled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean + kappa * var.sqrt()).max(MIN_THETA)
        }
        BoundaryPolicy::Fixed { theta } => {
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(Error::InvalidParameter(format!("fixed threshold {theta}")));
            }
            theta
        }
    };
    Ok(DecisionBoundary { theta })
}
