use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// `classes` isotropic Gaussian clusters of standard deviation `spread`,
/// centred on distinct vertices of the `{-1, +1}^dim` hypercube. Samples are
/// grouped by class, `per_class` each.
pub fn gen_blobs(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 || dim < 2 {
        return Err(Error::Config(format!("blobs need at least 2 classes and 2 dims, got K={classes}, d={dim}")));
    }
    if dim < 64 && classes > (1usize << dim) {
        return Err(Error::Config(format!("{classes} classes do not fit on the vertices of a {dim}-cube")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut r = rng::stream(seed, &[rng::tag::DATA]);

    let mut seen = BTreeSet::new();
    let mut means = Vec::with_capacity(classes);
    while means.len() < classes {
        let vertex: Vec<bool> = (0..dim).map(|_| r.random_bool(0.5)).collect();
        if seen.insert(vertex.clone()) {
            means.push(vertex.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect::<Vec<f64>>());
        }
    }

    let n = classes * per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let mut row = features.row_mut(c * per_class + i);
            for (x, &mu) in row.iter_mut().zip(mean) {
                let z: f64 = r.sample(StandardNormal);
                *x = mu + spread * z;
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_counts() {
        let d = gen_blobs(2, 3, 10, 1.0, 1).unwrap();
        assert_eq!(d.len(), 20);
        assert_eq!(d.class_counts(), vec![10, 10]);
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let d = gen_blobs(3, 4, 5, 0.0, 2).unwrap();
        for c in 0..3 {
            let rows: Vec<_> = (0..15).filter(|&r| d.labels()[r] == c).collect();
            for &r in &rows {
                assert_eq!(d.features().row(r), d.features().row(rows[0]));
                assert!(d.features().row(r).iter().all(|v| v.abs() == 1.0));
            }
        }
        assert_ne!(d.features().row(0), d.features().row(5));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_blobs(4, 5, 7, 0.8, 42).unwrap(), gen_blobs(4, 5, 7, 0.8, 42).unwrap());
        assert_ne!(gen_blobs(4, 5, 7, 0.8, 42).unwrap(), gen_blobs(4, 5, 7, 0.8, 43).unwrap());
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(gen_blobs(1, 4, 5, 1.0, 0).is_err());
        assert!(gen_blobs(5, 2, 5, 1.0, 0).is_err());
        assert!(gen_blobs(2, 2, 5, -1.0, 0).is_err());
    }
}
