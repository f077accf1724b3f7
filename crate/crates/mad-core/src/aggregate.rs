//! Combining per-reference estimates into one prediction.
//!
//! Every reference produces an estimate together with the distance it was
//! computed across. Softmin turns those distances into weights,
//!
//! ```text
//! weight_i = exp(-d_i) / Z        Z = k * exp(-s) + sum_j exp(-d_j)
//! ```
//!
//! where `k` phantom "sentinel" entries sit at a fixed distance `s` with a
//! fixed value. Sentinels soak up weight whenever all real references are
//! far away, pulling the prediction toward the sentinel value (0 by
//! default) instead of trusting a bad reference; the total sentinel weight
//! doubles as an uncertainty reading.

use serde::{Deserialize, Serialize};

use crate::error::{MadError, Result};

/// One reference's contribution: the predicted value and how far away the
/// reference was.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub distance: f64,
}

/// Phantom references at a fixed distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentinelConfig {
    /// How many sentinels participate; 0 disables them.
    pub count: usize,
    /// The distance every sentinel sits at.
    pub distance: f64,
    /// The value every sentinel votes for.
    pub value: f64,
}

impl Default for SentinelConfig {
    fn default() -> Self {
        SentinelConfig {
            count: 8,
            distance: 1.0,
            value: 0.0,
        }
    }
}

impl SentinelConfig {
    pub fn none() -> Self {
        SentinelConfig {
            count: 0,
            distance: 1.0,
            value: 0.0,
        }
    }

    /// Total unnormalized sentinel mass, `k * exp(-s)`.
    pub fn mass(&self) -> f64 {
        self.count as f64 * (-self.distance).exp()
    }
}

fn check_estimates(estimates: &[Estimate]) -> Result<()> {
    for e in estimates {
        if !e.value.is_finite() || !e.distance.is_finite() || e.distance < 0.0 {
            return Err(MadError::NonFinite {
                context: format!("estimate (value {}, distance {})", e.value, e.distance),
            });
        }
    }
    Ok(())
}

/// Unweighted average of estimate values; distances are ignored.
pub fn aggregate_mean(estimates: &[Estimate]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(MadError::EmptyInput {
            what: "estimates for aggregate_mean",
        });
    }
    check_estimates(estimates)?;
    Ok(estimates.iter().map(|e| e.value).sum::<f64>() / estimates.len() as f64)
}

/// Softmin weights for the real distances plus the total sentinel weight.
///
/// The returned weights and the sentinel weight sum to 1. Empty distances
/// are only allowed when at least one sentinel exists to carry the mass.
pub fn softmin_weights(distances: &[f64], sentinels: &SentinelConfig) -> Result<(Vec<f64>, f64)> {
    if distances.is_empty() && sentinels.count == 0 {
        return Err(MadError::EmptyInput {
            what: "distances for softmin with no sentinels",
        });
    }
    for &d in distances {
        if !d.is_finite() || d < 0.0 {
            return Err(MadError::NonFinite {
                context: format!("softmin distance {d}"),
            });
        }
    }
    let sentinel_mass = sentinels.mass();
    let masses: Vec<f64> = distances.iter().map(|&d| (-d).exp()).collect();
    let z = sentinel_mass + masses.iter().sum::<f64>();
    let weights = masses.iter().map(|&m| m / z).collect();
    Ok((weights, sentinel_mass / z))
}

/// Softmin-weighted combination of estimates.
///
/// Returns `(prediction, uncertainty)` where uncertainty is the sentinel
/// weight: 0 when sentinels are disabled, approaching 1 when every real
/// reference is far away.
pub fn aggregate_softmin(
    estimates: &[Estimate],
    sentinels: &SentinelConfig,
) -> Result<(f64, f64)> {
    check_estimates(estimates)?;
    let distances: Vec<f64> = estimates.iter().map(|e| e.distance).collect();
    let (weights, sentinel_weight) = softmin_weights(&distances, sentinels)?;
    let mut prediction = sentinel_weight * sentinels.value;
    for (e, w) in estimates.iter().zip(&weights) {
        prediction += w * e.value;
    }
    Ok((prediction, sentinel_weight))
}
