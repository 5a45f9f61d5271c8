//! Post-resampling kernel move step: whitened, bandwidth-scaled Gaussian
//! jitter with truncated per-coordinate kernels on bounded coordinates, so
//! the move never pushes a particle outside its support.

use crate::ensemble::{kahan_sum, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::particle_rng;
use crate::truncnorm::{self, Interval};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian product kernel: one bandwidth, one support interval per
/// coordinate. Unbounded coordinates move under the full whitening transform;
/// bounded ones under a per-coordinate truncated kernel.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub bandwidth: f64,
    pub bounds: Vec<Interval>,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, bounds: Vec<Interval>) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth, bounds })
    }
}

/// Weighted empirical covariance and its lower-triangular factor.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    covariance: DMatrix<f64>,
    root: DMatrix<f64>,
}

impl WhiteningTransform {
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }

    /// Marginal standard deviation of one coordinate.
    pub fn coord_sd(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

/// Relative eigenvalue floor below which jitter is added before factoring.
const EIGEN_FLOOR: f64 = 1e-10;
/// Jitter added to the diagonal, relative to the trace.
const JITTER: f64 = 1e-8;

/// Weighted empirical covariance of the ensemble with the jitter policy:
/// if the smallest eigenvalue is below `1e-10·trace`, add `1e-8·trace·I`
/// before the triangular factorisation.
pub fn weighted_covariance(ens: &WeightedEnsemble) -> Result<WhiteningTransform> {
    if ens.len() < 2 {
        return Err(Error::InvalidParameter(
            "covariance needs at least two particles".into(),
        ));
    }
    let dim = ens.dim();
    let weights = ens.weights();
    let flat = ens.particles_flat();

    let mean: Vec<f64> = (0..dim)
        .map(|c| kahan_sum(flat.chunks(dim).zip(weights).map(|(p, &w)| w * p[c])))
        .collect();

    let mut cov = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let v = kahan_sum(
                flat.chunks(dim)
                    .zip(weights)
                    .map(|(p, &w)| w * (p[a] - mean[a]) * (p[b] - mean[b])),
            );
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let trace = cov.trace();
    // Spread at the level of rounding noise in the mean subtraction counts
    // as zero spread.
    let second_moment: f64 = (0..dim)
        .map(|c| kahan_sum(flat.chunks(dim).zip(weights).map(|(p, &w)| w * p[c] * p[c])))
        .sum();
    if trace <= 0.0 || trace <= 1e-24 * second_moment {
        return Err(Error::DegenerateCovariance);
    }

    let eigen_min = cov
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if eigen_min < EIGEN_FLOOR * trace {
        for i in 0..dim {
            cov[(i, i)] += JITTER * trace;
        }
    }

    let mut attempt = cov.clone();
    let root = loop {
        match attempt.clone().cholesky() {
            Some(c) => break c.l(),
            None => {
                for i in 0..dim {
                    attempt[(i, i)] += JITTER * trace;
                }
            }
        }
    };

    Ok(WhiteningTransform {
        covariance: cov,
        root,
    })
}

/// Silverman's rule-of-thumb bandwidth for the Gaussian kernel:
/// `(4 / (M·(n_x + 2)))^(1/(n_x + 4))`.
pub fn silverman_bandwidth(m: usize, n_x: usize) -> f64 {
    debug_assert!(m >= 2 && n_x >= 1);
    (4.0 / (m as f64 * (n_x as f64 + 2.0))).powf(1.0 / (n_x as f64 + 4.0))
}

/// Moves every particle by `h·Σ^(1/2)·ε` with `ε` from the product kernel.
/// Bounded coordinates use a truncated one-dimensional kernel whitened by the
/// marginal standard deviation, so bounds are preserved exactly. Weights are
/// never altered. Randomness comes from one dedicated stream per particle.
pub fn regularize_move(
    ens: &mut WeightedEnsemble,
    spec: &KernelSpec,
    wt: &WhiteningTransform,
    base: &ChaCha8Rng,
) {
    let dim = ens.dim();
    debug_assert_eq!(spec.bounds.len(), dim);
    let h = spec.bandwidth;

    let unbounded: Vec<usize> = (0..dim)
        .filter(|&i| !spec.bounds[i].is_bounded())
        .collect();
    let sub_root = unbounded_block_root(wt, &unbounded);
    let coord_sd: Vec<f64> = (0..dim).map(|i| wt.coord_sd(i)).collect();
    let bounds = &spec.bounds;

    exec::for_each_particle(&mut ens.particles, dim, |j, p| {
        let mut rng = particle_rng(base, j);
        move_particle(p, h, &unbounded, &sub_root, &coord_sd, bounds, &mut rng);
    });
}

/// Alternate formulation of the combined resample + move: each output
/// particle draws a source index from the categorical weights and jitters it
/// with the same kernel. Distributionally equivalent to multinomial
/// resampling followed by [`regularize_move`]; kept as an independent code
/// path for cross-validation.
pub fn kernel_mixture_resample(
    ens: &WeightedEnsemble,
    spec: &KernelSpec,
    wt: &WhiteningTransform,
    base: &ChaCha8Rng,
) -> WeightedEnsemble {
    let dim = ens.dim();
    let m = ens.len();
    let h = spec.bandwidth;

    let mut cum = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &w in ens.weights() {
        acc += w;
        cum.push(acc);
    }

    let unbounded: Vec<usize> = (0..dim)
        .filter(|&i| !spec.bounds[i].is_bounded())
        .collect();
    let sub_root = unbounded_block_root(wt, &unbounded);
    let coord_sd: Vec<f64> = (0..dim).map(|i| wt.coord_sd(i)).collect();
    let bounds = &spec.bounds;
    let src = ens.particles_flat();

    let mut out = vec![0.0; m * dim];
    exec::for_each_particle(&mut out, dim, |j, p| {
        let mut rng = particle_rng(base, j);
        let u: f64 = rng.gen();
        let k = cum.partition_point(|&c| c < u).min(m - 1);
        p.copy_from_slice(&src[k * dim..(k + 1) * dim]);
        move_particle(p, h, &unbounded, &sub_root, &coord_sd, bounds, &mut rng);
    });

    WeightedEnsemble {
        particles: out,
        weights: vec![1.0 / m as f64; m],
        dim,
    }
}

fn unbounded_block_root(wt: &WhiteningTransform, unbounded: &[usize]) -> DMatrix<f64> {
    let k = unbounded.len();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let mut sub = DMatrix::zeros(k, k);
    for (r, &a) in unbounded.iter().enumerate() {
        for (c, &b) in unbounded.iter().enumerate() {
            sub[(r, c)] = wt.covariance()[(a, b)];
        }
    }
    let trace = sub.trace().max(f64::MIN_POSITIVE);
    loop {
        match sub.clone().cholesky() {
            Some(c) => return c.l(),
            None => {
                for i in 0..k {
                    sub[(i, i)] += JITTER * trace;
                }
            }
        }
    }
}

fn move_particle<R: Rng + ?Sized>(
    p: &mut [f64],
    h: f64,
    unbounded: &[usize],
    sub_root: &DMatrix<f64>,
    coord_sd: &[f64],
    bounds: &[Interval],
    rng: &mut R,
) {
    if !unbounded.is_empty() {
        let k = unbounded.len();
        let eps: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        for (r, &coord) in unbounded.iter().enumerate() {
            let mut shift = 0.0;
            for c in 0..=r {
                shift += sub_root[(r, c)] * eps[c];
            }
            p[coord] += h * shift;
        }
    }
    for (i, bound) in bounds.iter().enumerate() {
        if bound.is_bounded() {
            p[i] = truncnorm::sample(p[i], h * coord_sd[i], *bound, rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::UnnormalisedWeights;
    use crate::resample::multinomial_resample;
    use crate::rng::phase_rng;
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_variance_is_one() {
        let ens = WeightedEnsemble::uniform(vec![-1.0, 1.0], 1).unwrap();
        let wt = weighted_covariance(&ens).unwrap();
        assert_abs_diff_eq!(wt.covariance()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wt.root()[(0, 0)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn identical_particles_are_degenerate() {
        let ens = WeightedEnsemble::uniform(vec![3.0; 10], 1).unwrap();
        assert!(matches!(
            weighted_covariance(&ens),
            Err(Error::DegenerateCovariance)
        ));
    }

    #[test]
    fn covariance_recovers_generator_within_five_percent() {
        // Oracle: draws x = L·z from a known 2-D Gaussian, cov = L·Lᵀ.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (l11, l21, l22) = (2.0, 1.2, 1.5);
        let mut flat = Vec::with_capacity(20_000);
        for _ in 0..10_000 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            flat.push(l11 * z1);
            flat.push(l21 * z1 + l22 * z2);
        }
        let truth = [
            [l11 * l11, l11 * l21],
            [l11 * l21, l21 * l21 + l22 * l22],
        ];
        let ens = WeightedEnsemble::uniform(flat, 2).unwrap();
        let wt = weighted_covariance(&ens).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_abs_diff_eq!(
                    wt.covariance()[(a, b)],
                    truth[a][b],
                    epsilon = 0.05 * truth[a][a].max(truth[b][b])
                );
            }
        }
        // Root reproduces the covariance.
        let rec = wt.root() * wt.root().transpose();
        for a in 0..2 {
            for b in 0..2 {
                let expect = wt.covariance()[(a, b)];
                assert!((rec[(a, b)] - expect).abs() <= 1e-8 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn silverman_formula_values() {
        assert_abs_diff_eq!(
            silverman_bandwidth(100_000, 1),
            (4.0 / 300_000.0f64).powf(0.2),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            silverman_bandwidth(4, 1),
            (1.0 / 3.0f64).powf(0.2),
            epsilon = 1e-15
        );
        // Strictly decreasing in M.
        let mut prev = silverman_bandwidth(2, 3);
        for m in [4, 16, 256, 65_536] {
            let h = silverman_bandwidth(m, 3);
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn move_preserves_weights_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let particles: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                0.02 + z.abs() * 0.5
            })
            .collect();
        let weights: Vec<f64> = (0..10_000).map(|j| 1.0 + (j % 7) as f64).collect();
        let mut ens = WeightedEnsemble::new(particles, 2, UnnormalisedWeights(weights)).unwrap();
        let before = ens.weights().to_vec();
        let wt = weighted_covariance(&ens).unwrap();
        let spec = KernelSpec::new(
            silverman_bandwidth(ens.len(), 2),
            vec![Interval::positive(), Interval::positive()],
        )
        .unwrap();
        regularize_move(&mut ens, &spec, &wt, &phase_rng(17));
        assert_eq!(ens.weights(), &before[..]);
        assert!(ens.particles_flat().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn unbounded_move_adds_kernel_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let particles: Vec<f64> = (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut ens = WeightedEnsemble::uniform(particles, 1).unwrap();
        let input_var = {
            let m = ens.mean(0);
            ens.estimate(|x| (x[0] - m) * (x[0] - m)).unwrap()
        };
        let wt = weighted_covariance(&ens).unwrap();
        let spec = KernelSpec::new(0.5, vec![Interval::UNBOUNDED]).unwrap();
        regularize_move(&mut ens, &spec, &wt, &phase_rng(23));
        let out_var = {
            let m = ens.mean(0);
            ens.estimate(|x| (x[0] - m) * (x[0] - m)).unwrap()
        };
        // Additive-noise identity: var_out = var_in + h²·Σ.
        let expected = input_var + 0.25 * wt.covariance()[(0, 0)];
        assert!((out_var - expected).abs() <= 0.05 * expected);
    }

    #[test]
    fn vanishing_bandwidth_approaches_identity() {
        let particles = vec![1.0, 2.0, 3.0, 4.0];
        let mut ens = WeightedEnsemble::uniform(particles.clone(), 1).unwrap();
        let wt = weighted_covariance(&ens).unwrap();
        let spec = KernelSpec::new(1e-300, vec![Interval::UNBOUNDED]).unwrap();
        regularize_move(&mut ens, &spec, &wt, &phase_rng(1));
        for (a, b) in ens.particles_flat().iter().zip(&particles) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_drift_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = 100_000;
        let particles: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut ens = WeightedEnsemble::uniform(particles, 1).unwrap();
        let before = ens.mean(0);
        let wt = weighted_covariance(&ens).unwrap();
        let h = 0.4;
        let spec = KernelSpec::new(h, vec![Interval::UNBOUNDED]).unwrap();
        regularize_move(&mut ens, &spec, &wt, &phase_rng(77));
        let sigma = wt.coord_sd(0);
        assert!((ens.mean(0) - before).abs() <= 4.0 * h * sigma / (m as f64).sqrt());
    }

    #[test]
    fn mixture_path_matches_resample_then_move() {
        // Kolmogorov-Smirnov distance between the two code paths' outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let m = 100_000;
        let particles: Vec<f64> = (0..m)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5 + 0.3)
            .collect();
        let weights: Vec<f64> = (0..m).map(|j| ((j % 13) + 1) as f64).collect();
        let ens = WeightedEnsemble::new(particles, 1, UnnormalisedWeights(weights)).unwrap();
        let wt = weighted_covariance(&ens).unwrap();
        let spec =
            KernelSpec::new(silverman_bandwidth(m, 1), vec![Interval::UNBOUNDED]).unwrap();

        let mut path_a = ens.clone();
        let (resampled, _) = multinomial_resample(&path_a, &mut phase_rng(100));
        path_a = resampled;
        regularize_move(&mut path_a, &spec, &wt, &phase_rng(101));

        let path_b = kernel_mixture_resample(&ens, &spec, &wt, &phase_rng(102));

        let mut a: Vec<f64> = path_a.particles_flat().to_vec();
        let mut b: Vec<f64> = path_b.particles_flat().to_vec();
        a.sort_unstable_by(f64::total_cmp);
        b.sort_unstable_by(f64::total_cmp);
        let ks = crate::testutil::ks_distance(&a, &b);
        assert!(ks <= 0.01, "KS distance {ks} too large");
    }
}
