use rand_distr::{Distribution, StandardNormal};

use super::dataset::Dataset;
use crate::seed;
use crate::tensor::Tensor;

/// Class centres: unit simplex vertices `e_c` when `dim >= classes`,
/// otherwise evenly spaced on the unit circle (or the unit interval when
/// `dim == 1`).
pub fn blob_centers(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut mu = vec![0.0; dim];
            if dim >= classes {
                mu[c] = 1.0;
            } else if dim == 1 {
                mu[0] = c as f64 / (classes - 1).max(1) as f64;
            } else {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                mu[0] = angle.cos();
                mu[1] = angle.sin();
            }
            mu
        })
        .collect()
}

/// Isotropic Gaussian blobs, `per_class` samples of each class in class
/// order. All arguments must be at least 1.
pub fn synth_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Dataset {
    assert!(classes >= 1 && per_class >= 1 && dim >= 1, "synth_blobs needs positive sizes");
    let centers = blob_centers(classes, dim);
    let mut rng = seed::stream(seed, &[seed::TAG_DATA]);
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mu) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mu {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, dim], features).expect("sized"), labels, classes)
        .expect("labels in range")
}
