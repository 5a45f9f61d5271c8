//! Multinomial and residual-multinomial resampling, both O(M).
//!
//! The multinomial scheme draws ordered uniforms directly (normalised
//! exponential spacings) and merges them against the cumulative weights in a
//! single linear pass, instead of sorting M independent uniforms. The residual
//! scheme copies the integral parts `⌊M·w_j⌋` deterministically and fills the
//! remainder with a multinomial draw on the residual mass.
//!
//! Filtered estimates should be computed by the caller *before* resampling;
//! this module never triggers itself.

use crate::ensemble::WeightedEnsemble;
use rand::Rng;
use rand_distr::Exp1;

/// Resampling scheme identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Multinomial,
    ResidualMultinomial,
}

/// Source indices chosen by a resampling step; the output ensemble is the
/// corresponding gather with uniform weights `1/M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResampleOutcome {
    pub indices: Vec<usize>,
    pub method: ResampleMethod,
}

/// Tolerance absorbing float rounding in `M·w` before taking integer parts,
/// so weights intended as exact multiples of `1/M` stay deterministic.
const INTEGRALITY_EPS: f64 = 1e-9;

/// Draws `draws` i.i.d. indices from the categorical distribution `weights`
/// in O(draws + M), returned in nondecreasing order.
pub fn multinomial_indices<R: Rng + ?Sized>(
    weights: &[f64],
    draws: usize,
    rng: &mut R,
) -> Vec<usize> {
    if draws == 0 {
        return Vec::new();
    }
    // Ordered uniforms U_(1) <= ... <= U_(draws) as cumulative exponential
    // spacings divided by the overall total.
    let mut cum = 0.0;
    let mut points = Vec::with_capacity(draws);
    for _ in 0..draws {
        let e: f64 = rng.sample(Exp1);
        cum += e;
        points.push(cum);
    }
    let e: f64 = rng.sample(Exp1);
    let total = cum + e;

    let last = weights.len() - 1;
    let mut indices = Vec::with_capacity(draws);
    let mut i = 0;
    let mut acc = weights[0];
    for p in points {
        let u = p / total;
        while u > acc && i < last {
            i += 1;
            acc += weights[i];
        }
        indices.push(i);
    }
    indices
}

/// Multinomial resampling: `M` i.i.d. draws proportional to the weights;
/// output weights are exactly `1/M`.
pub fn multinomial_resample<R: Rng + ?Sized>(
    ens: &WeightedEnsemble,
    rng: &mut R,
) -> (WeightedEnsemble, ResampleOutcome) {
    let indices = multinomial_indices(ens.weights(), ens.len(), rng);
    let resampled = gather(ens, &indices);
    (
        resampled,
        ResampleOutcome {
            indices,
            method: ResampleMethod::Multinomial,
        },
    )
}

/// Residual allocation of `draws` indices: copies `⌊draws·w_j⌋` of each index
/// deterministically, then draws the remaining `draws − R` multinomially from
/// the residual weights `(draws·w_j − ⌊draws·w_j⌋)/(draws − R)`. Consumes no
/// randomness at all when `R = draws`.
pub fn residual_indices<R: Rng + ?Sized>(
    weights: &[f64],
    draws: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut indices = Vec::with_capacity(draws);
    let mut residual = vec![0.0; weights.len()];
    let mut allocated = 0usize;
    for (j, &w) in weights.iter().enumerate() {
        let t = draws as f64 * w;
        let copies = (t + INTEGRALITY_EPS).floor() as usize;
        for _ in 0..copies {
            indices.push(j);
        }
        residual[j] = (t - copies as f64).max(0.0);
        allocated += copies;
    }

    let remaining = draws - allocated;
    if remaining > 0 {
        let scale = 1.0 / remaining as f64;
        for r in residual.iter_mut() {
            *r *= scale;
        }
        indices.extend(multinomial_indices(&residual, remaining, rng));
    }
    indices
}

/// Residual-multinomial resampling of a whole ensemble (`draws = M`);
/// output weights are exactly `1/M`.
pub fn residual_resample<R: Rng + ?Sized>(
    ens: &WeightedEnsemble,
    rng: &mut R,
) -> (WeightedEnsemble, ResampleOutcome) {
    let indices = residual_indices(ens.weights(), ens.len(), rng);
    let resampled = gather(ens, &indices);
    (
        resampled,
        ResampleOutcome {
            indices,
            method: ResampleMethod::ResidualMultinomial,
        },
    )
}

fn gather(ens: &WeightedEnsemble, indices: &[usize]) -> WeightedEnsemble {
    let dim = ens.dim();
    let mut particles = Vec::with_capacity(indices.len() * dim);
    for &j in indices {
        particles.extend_from_slice(ens.particle(j));
    }
    WeightedEnsemble {
        particles,
        weights: vec![1.0 / indices.len() as f64; indices.len()],
        dim,
    }
}
