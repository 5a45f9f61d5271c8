//! Shared helpers for in-crate tests.

/// Two-sample Kolmogorov-Smirnov distance between sorted samples.
pub(crate) fn ks_distance(sorted_a: &[f64], sorted_b: &[f64]) -> f64 {
    let (na, nb) = (sorted_a.len(), sorted_b.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        if sorted_a[i] <= sorted_b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    d
}
