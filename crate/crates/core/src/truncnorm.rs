//! Exact truncated-Gaussian sampling on open intervals.
//!
//! Draws use the inverse CDF whenever the interval carries at least
//! [`MIN_INVERSE_CDF_MASS`] probability and switch to a tail-exponential
//! rejection sampler otherwise, so intervals deep in a tail never stall a
//! naive accept-reject loop.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

/// Below this interval mass the inverse-CDF map loses resolution and the
/// sampler switches to tail rejection.
pub const MIN_INVERSE_CDF_MASS: f64 = 1e-10;

/// Standardised bound beyond which truncation mass is < 1.2e-19 per side and
/// a plain normal draw is indistinguishable from the truncated one.
const NEGLIGIBLE_TAIL: f64 = 9.0;

/// One-dimensional open interval, possibly unbounded on either side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(Error::IntervalEmpty(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    /// `(0, +∞)`.
    pub fn positive() -> Self {
        Self {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    /// `(−∞, 0)`.
    pub fn negative() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: 0.0,
        }
    }

    /// `(lo, +∞)`.
    pub fn above(lo: f64) -> Self {
        Self {
            lo,
            hi: f64::INFINITY,
        }
    }

    /// `(−∞, hi)`.
    pub fn below(hi: f64) -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() || self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// Nearest representable point strictly inside the interval.
    pub fn clamp_strict(&self, x: f64) -> f64 {
        let lo_open = if self.lo.is_finite() {
            self.lo.next_up()
        } else {
            f64::MIN
        };
        let hi_open = if self.hi.is_finite() {
            self.hi.next_down()
        } else {
            f64::MAX
        };
        x.clamp(lo_open, hi_open)
    }
}

/// Standard normal CDF via the complementary error function.
pub fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile; precise for small probabilities.
pub fn std_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// log Φ(x), stable across both tails.
pub fn ln_std_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        // ln(1 - Φ̄(x)) with Φ̄(x) <= 1/2
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -37.0 {
        (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic expansion; erfc underflows past -37.
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// log of the standard-normal mass of `(a, b)`.
pub fn ln_mass(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return 0.0;
    }
    if a >= 0.0 {
        return ln_mass(-b, -a);
    }
    if b == f64::INFINITY {
        // ln(1 - Φ(a)) with Φ(a) <= 1/2
        return (-std_cdf(a)).ln_1p();
    }
    (std_cdf(b) - std_cdf(a)).ln()
}

/// Exact draw from `N(mu, sd², interval)`. `sd = 0` returns `mu` clamped
/// into the interval; outputs always lie strictly inside the bounds.
pub fn sample<R: Rng + ?Sized>(mu: f64, sd: f64, interval: Interval, rng: &mut R) -> f64 {
    debug_assert!(sd >= 0.0 && sd.is_finite());
    if sd == 0.0 {
        return interval.clamp_strict(mu);
    }
    let a = (interval.lo - mu) / sd;
    let b = (interval.hi - mu) / sd;

    let z = if a <= -NEGLIGIBLE_TAIL && b >= NEGLIGIBLE_TAIL {
        rng.sample(StandardNormal)
    } else if a + b <= 0.0 || (a == f64::NEG_INFINITY && b == f64::INFINITY) {
        sample_std(a, b, rng)
    } else {
        // Reflect so the mass sits on the numerically precise side.
        -sample_std(-b, -a, rng)
    };
    interval.clamp_strict(mu + sd * z)
}

/// Truncated standard normal on `(a, b)` with the interval midpoint at or
/// left of the origin.
fn sample_std<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let cdf_a = std_cdf(a);
    let cdf_b = std_cdf(b);
    let mass = cdf_b - cdf_a;
    if mass >= MIN_INVERSE_CDF_MASS {
        let u: f64 = rng.gen();
        let z = std_quantile(cdf_a + u * mass);
        return z.clamp(a, b);
    }
    // Both bounds deep in the left tail; sample the mirrored right tail.
    -tail_rejection(-b, -a, rng)
}

/// Rejection sampler on `(alpha, beta)` with `alpha > 0` large.
fn tail_rejection<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    if beta.is_finite() && (beta - alpha) * lambda <= 1.0 {
        // Narrow slice: uniform proposal, bounded acceptance.
        loop {
            let x = alpha + (beta - alpha) * rng.gen::<f64>();
            let accept = (0.5 * (alpha * alpha - x * x)).exp();
            if rng.gen::<f64>() <= accept {
                return x;
            }
        }
    }
    // Shifted-exponential proposal with cutoff at beta.
    loop {
        let e: f64 = rng.sample(rand_distr::Exp1);
        let x = alpha + e / lambda;
        if x >= beta {
            continue;
        }
        let d = x - lambda;
        if rng.gen::<f64>() <= (-0.5 * d * d).exp() {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Oracle: mean of N(mu, sd², (lo, hi)) from the φ/Φ moment formula.
    /// The interval mass is computed as a survival-function difference when
    /// the interval sits in the right tail, where the plain CDF saturates.
    fn truncated_mean(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let survival = |x: f64| 0.5 * erfc(x * FRAC_1_SQRT_2);
        let a = (lo - mu) / sd;
        let b = (hi - mu) / sd;
        let pa = if a.is_finite() { pdf(a) } else { 0.0 };
        let pb = if b.is_finite() { pdf(b) } else { 0.0 };
        let mass = if a >= 0.0 {
            survival(a) - survival(b)
        } else {
            std_cdf(b) - std_cdf(a)
        };
        mu + sd * (pa - pb) / mass
    }

    #[test]
    fn unbounded_interval_matches_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample(2.0, 3.0, Interval::UNBOUNDED, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        // 3 SE bands.
        assert_abs_diff_eq!(mean, 2.0, epsilon = 3.0 * 3.0 / (n as f64).sqrt());
        assert_abs_diff_eq!(var, 9.0, epsilon = 3.0 * 9.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample(0.0, 1.0, Interval::positive(), &mut rng))
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(mean, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 0.01);
    }

    #[test]
    fn draws_stay_strictly_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let iv = Interval::new(0.0, 0.5).unwrap();
        for _ in 0..100_000 {
            let x = sample(-1.0, 2.0, iv, &mut rng);
            assert!(x > 0.0 && x < 0.5);
        }
    }

    #[test]
    fn deep_tail_rejection_matches_moment_oracle() {
        // Interval mass ~ Φ(-9) ≈ 1.1e-19: inverse CDF path is unusable.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50_000;
        let lo = 9.0;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample(0.0, 1.0, Interval::above(lo), &mut rng))
            .collect();
        assert!(draws.iter().all(|&x| x > lo));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let oracle = truncated_mean(0.0, 1.0, lo, f64::INFINITY);
        assert_abs_diff_eq!(mean, oracle, epsilon = 0.005);
    }

    #[test]
    fn deep_left_tail_reflects() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample(0.0, 1.0, Interval::below(-9.0), &mut rng))
            .collect();
        assert!(draws.iter().all(|&x| x < -9.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let oracle = truncated_mean(0.0, 1.0, f64::NEG_INFINITY, -9.0);
        assert_abs_diff_eq!(mean, oracle, epsilon = 0.005);
    }

    #[test]
    fn narrow_deep_slice_uses_uniform_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let iv = Interval::new(10.0, 10.05).unwrap();
        for _ in 0..10_000 {
            let x = sample(0.0, 1.0, iv, &mut rng);
            assert!(x > 10.0 && x < 10.05);
        }
    }

    #[test]
    fn zero_sd_clamps_into_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let iv = Interval::new(1.0, 2.0).unwrap();
        assert!(iv.contains(sample(0.0, 0.0, iv, &mut rng)));
        assert_eq!(sample(1.5, 0.0, iv, &mut rng), 1.5);
        assert!(iv.contains(sample(5.0, 0.0, iv, &mut rng)));
    }

    #[test]
    fn empty_interval_rejected() {
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
        assert!(Interval::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn truncated_mean_shifts_upward_for_bounded_walk() {
        // Mean of N(100, 1², (0, ∞)) is essentially 100; with sd comparable
        // to the distance from the bound the mean shifts up.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample(1.0, 2.0, Interval::positive(), &mut rng))
            .sum::<f64>()
            / n as f64;
        let oracle = truncated_mean(1.0, 2.0, 0.0, f64::INFINITY);
        assert!(oracle > 1.0);
        assert_abs_diff_eq!(mean, oracle, epsilon = 0.02);
    }

    #[test]
    fn ln_std_cdf_tails() {
        assert_abs_diff_eq!(ln_std_cdf(0.0), 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_std_cdf(5.0), (-2.866516e-7f64).ln_1p(), epsilon = 1e-9);
        // Deep left tail stays finite and monotone.
        assert!(ln_std_cdf(-40.0) < ln_std_cdf(-39.0));
        assert!(ln_std_cdf(-40.0).is_finite());
    }

    #[test]
    fn ln_mass_one_sided_agrees_with_cdf() {
        let direct = (std_cdf(1.0) - std_cdf(-0.5)).ln();
        assert_abs_diff_eq!(ln_mass(-0.5, 1.0), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ln_mass(-f64::INFINITY, 0.0),
            0.5f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(ln_mass(-2.0, f64::INFINITY), (-std_cdf(-2.0)).ln_1p(), epsilon = 1e-12);
    }
}
