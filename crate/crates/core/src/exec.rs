//! Data-parallel execution over particle chunks.
//!
//! With the `parallel` feature (the default) the main helpers fan out over
//! rayon; without it they alias the `_seq` twins. Both paths are bit-identical
//! because randomness enters through per-chunk indices and reductions happen
//! outside these helpers in a fixed order. The `_seq` twins stay available in
//! every build so benchmarks can compare the two.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to each `dim`-sized particle chunk, sequentially.
pub fn for_each_particle_seq<F>(particles: &mut [f64], dim: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    for (j, p) in particles.chunks_mut(dim).enumerate() {
        f(j, p);
    }
}

/// Map each `dim`-sized particle chunk to a scalar, sequentially.
pub fn map_particles_seq<F>(particles: &[f64], dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    particles
        .chunks(dim)
        .enumerate()
        .map(|(j, p)| f(j, p))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn for_each_particle<F>(particles: &mut [f64], dim: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    particles
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(j, p)| f(j, p));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_particle<F>(particles: &mut [f64], dim: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    for_each_particle_seq(particles, dim, f);
}

#[cfg(feature = "parallel")]
pub fn map_particles<F>(particles: &[f64], dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    particles
        .par_chunks(dim)
        .enumerate()
        .map(|(j, p)| f(j, p))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_particles<F>(particles: &[f64], dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    map_particles_seq(particles, dim, f)
}

/// Evaluate `f(0..n)` and collect the results in index order. Used for
/// coarse-grained independent jobs such as MCMC chains.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let src: Vec<f64> = (0..3000).map(|i| i as f64 * 0.25).collect();

        let mut a = src.clone();
        let mut b = src.clone();
        let step = |j: usize, p: &mut [f64]| {
            for (c, x) in p.iter_mut().enumerate() {
                *x = (*x + j as f64).sin() + c as f64;
            }
        };
        for_each_particle(&mut a, 3, step);
        for_each_particle_seq(&mut b, 3, step);
        assert_eq!(a, b);

        let g = |j: usize, p: &[f64]| p.iter().sum::<f64>() * (j + 1) as f64;
        assert_eq!(map_particles(&src, 3, g), map_particles_seq(&src, 3, g));
    }
}
