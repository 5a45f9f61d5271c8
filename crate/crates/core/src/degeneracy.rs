//! Degeneracy criteria for importance weights — effective sample size,
//! coefficient of variation, Shannon entropy — and the three-way health
//! classification driving the composite filter's resample/skip branches.

use crate::ensemble::kahan_sum;
use crate::error::{Error, Result};

/// Effective sample size `1/Σ w_k²` of normalised weights; ranges from `M`
/// (uniform weights) down to 1 (a single particle carries all the mass).
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / kahan_sum(weights.iter().map(|w| w * w))
}

/// Coefficient of variation `sqrt((1/M) Σ (M·w_k − 1)²)`, in `[0, sqrt(M-1)]`.
pub fn cv(weights: &[f64]) -> f64 {
    let m = weights.len() as f64;
    (kahan_sum(weights.iter().map(|w| {
        let d = m * w - 1.0;
        d * d
    })) / m)
        .sqrt()
}

/// Shannon entropy `−Σ w_k ln w_k` with the convention `0·ln 0 = 0`;
/// ranges from `ln M` (uniform) down to 0 (point mass).
pub fn entropy(weights: &[f64]) -> f64 {
    kahan_sum(
        weights
            .iter()
            .map(|&w| if w > 0.0 { -w * w.ln() } else { 0.0 }),
    )
}

/// Health of the weight distribution at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Healthy,
    Degenerate,
    Critical,
}

/// Resample / outlier thresholds as fractions of the particle count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub epsilon_resample: f64,
    pub epsilon_crit: f64,
}

impl Thresholds {
    pub fn new(epsilon_resample: f64, epsilon_crit: f64) -> Result<Self> {
        if !(epsilon_crit > 0.0 && epsilon_crit < epsilon_resample && epsilon_resample <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must satisfy 0 < epsilon_crit < epsilon_resample <= 1, got ({epsilon_resample}, {epsilon_crit})"
            )));
        }
        Ok(Self {
            epsilon_resample,
            epsilon_crit,
        })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            epsilon_resample: 0.5,
            epsilon_crit: 0.001,
        }
    }
}

/// Classifies an effective sample size against the thresholds. Ties go to the
/// healthier class, matching the strict inequalities of the filter branches.
pub fn classify(ess: f64, m: usize, thresholds: &Thresholds) -> Health {
    let m = m as f64;
    if ess < thresholds.epsilon_crit * m {
        Health::Critical
    } else if ess < thresholds.epsilon_resample * m {
        Health::Degenerate
    } else {
        Health::Healthy
    }
}

/// All three degeneracy criteria plus the classification at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyReport {
    pub ess: f64,
    pub cv: f64,
    pub entropy: f64,
    pub health: Health,
}

impl DegeneracyReport {
    /// Evaluates the criteria on normalised weights.
    pub fn evaluate(weights: &[f64], thresholds: &Thresholds) -> Self {
        let ess_v = ess(weights);
        Self {
            ess: ess_v,
            cv: cv(weights),
            entropy: entropy(weights),
            health: classify(ess_v, weights.len(), thresholds),
        }
    }

    /// Report for the degenerate limit where every raw weight underflowed to
    /// zero: the normalised distribution collapses to a point mass, so the
    /// criteria take their extreme values and the health is forced Critical.
    pub fn total_degeneracy(m: usize) -> Self {
        Self {
            ess: 1.0,
            cv: ((m - 1) as f64).sqrt(),
            entropy: 0.0,
            health: Health::Critical,
        }
    }
}
