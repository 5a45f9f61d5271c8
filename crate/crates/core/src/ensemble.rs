//! Weighted particle ensembles: normalisation, estimation and weighted
//! quantiles. The ensemble is the filter's sole mutable state and is kept
//! normalised at rest; unnormalised weights only exist transiently inside a
//! step.

use crate::error::{Error, Result};

/// Neumaier-compensated sum with a fixed left-to-right association order, so
/// reductions are reproducible regardless of worker count.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated dot product `Σ w_i v_i` in index order.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    kahan_sum(values.iter().zip(weights).map(|(v, w)| v * w))
}

/// Raw importance weights prior to self-normalisation.
#[derive(Debug, Clone)]
pub struct UnnormalisedWeights(pub Vec<f64>);

/// Normalises raw weights to sum to one.
///
/// Fails with [`Error::AllWeightsZero`] when the total mass is zero (the
/// caller decides whether that is an outlier) and [`Error::NonFiniteWeight`]
/// on NaN/infinite or negative entries.
pub fn normalize_weights(raw: UnnormalisedWeights) -> Result<Vec<f64>> {
    let mut values = raw.0;
    normalize_in_place(&mut values)?;
    Ok(values)
}

pub(crate) fn normalize_in_place(values: &mut [f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    for (j, v) in values.iter().enumerate() {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::NonFiniteWeight(j));
        }
    }
    let total = kahan_sum(values.iter().copied());
    if total <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// `M` weighted points in state space. Particles are stored row-major as a
/// flat `M × dim` buffer; weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    pub(crate) particles: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) dim: usize,
}

impl WeightedEnsemble {
    /// Builds an ensemble from raw particles and unnormalised weights.
    pub fn new(particles: Vec<f64>, dim: usize, weights: UnnormalisedWeights) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be > 0".into()));
        }
        let m = weights.0.len();
        if m == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if particles.len() != m * dim {
            return Err(Error::DimensionMismatch {
                expected: m * dim,
                got: particles.len(),
            });
        }
        let weights = normalize_weights(weights)?;
        Ok(Self {
            particles,
            weights,
            dim,
        })
    }

    /// Builds an ensemble with uniform weights `1/M`.
    pub fn uniform(particles: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || particles.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim.max(1),
                got: particles.len(),
            });
        }
        let m = particles.len() / dim;
        if m == 0 {
            return Err(Error::EmptyEnsemble);
        }
        Ok(Self {
            particles,
            weights: vec![1.0 / m as f64; m],
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.particles[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn particles_flat(&self) -> &[f64] {
        &self.particles
    }

    pub fn iter_particles(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.particles
            .chunks(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Self-normalised importance estimate `Σ_j w_j h(x_j)`.
    pub fn estimate<H>(&self, h: H) -> Result<f64>
    where
        H: Fn(&[f64]) -> f64,
    {
        let total = kahan_sum(
            self.particles
                .chunks(self.dim)
                .zip(&self.weights)
                .map(|(p, &w)| w * h(p)),
        );
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NonFiniteResult)
        }
    }

    /// Weighted mean of one state coordinate.
    pub fn mean(&self, coord: usize) -> f64 {
        kahan_sum(
            self.particles
                .chunks(self.dim)
                .zip(&self.weights)
                .map(|(p, &w)| w * p[coord]),
        )
    }

    /// Symmetric credible interval on one coordinate: weighted quantiles at
    /// `(1-level)/2` and `(1+level)/2`. Requires one sort per call.
    pub fn credible_interval(&self, coord: usize, level: f64) -> Result<(f64, f64)> {
        assert!(
            level > 0.0 && level < 1.0,
            "credible level must lie in (0, 1)"
        );
        let values: Vec<f64> = self
            .particles
            .chunks(self.dim)
            .map(|p| p[coord])
            .collect();
        let q_lo = (1.0 - level) / 2.0;
        let q_hi = (1.0 + level) / 2.0;
        let (lo, hi) = weighted_quantile_pair(&values, &self.weights, q_lo, q_hi)?;
        Ok((lo, hi))
    }
}

/// Weighted quantile: the inverse of the right-continuous weighted empirical
/// CDF, i.e. the smallest value whose cumulative weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    let (lo, _) = weighted_quantile_pair(values, weights, q, q)?;
    Ok(lo)
}

/// Both quantiles from a single sort; `q_lo <= q_hi` expected.
pub fn weighted_quantile_pair(
    values: &[f64],
    weights: &[f64],
    q_lo: f64,
    q_hi: f64,
) -> Result<(f64, f64)> {
    if values.is_empty() || weights.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    debug_assert_eq!(values.len(), weights.len());
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));

    let mut cum = 0.0;
    let mut lo = None;
    let mut hi = None;
    for &idx in &order {
        cum += weights[idx as usize];
        if lo.is_none() && cum >= q_lo {
            lo = Some(values[idx as usize]);
        }
        if cum >= q_hi {
            hi = Some(values[idx as usize]);
            break;
        }
    }
    // Rounding can leave the accumulated mass a hair below one.
    let last = values[*order.last().unwrap() as usize];
    Ok((lo.unwrap_or(last), hi.unwrap_or(last)))
}
