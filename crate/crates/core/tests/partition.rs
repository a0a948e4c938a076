use std::collections::BTreeSet;

use fedmpr::data::partition::{dirichlet_overlap_partition, mean_client_entropy};
use fedmpr::data::{
    dirichlet_partition, high_cs_partition, low_cs_partition, partition, synth_blobs, Dataset, Partition, Scheme,
};
use fedmpr::{Error, Tensor};
use proptest::prelude::*;

/// Labels only; features are a single dummy column.
fn labelled(labels: Vec<usize>, classes: usize) -> Dataset {
    let n = labels.len();
    Dataset::new(Tensor::zeros(&[n, 1]), labels, classes).unwrap()
}

fn balanced(classes: usize, per_class: usize) -> Dataset {
    labelled((0..classes * per_class).map(|i| i % classes).collect(), classes)
}

fn assert_disjoint_cover(p: &Partition, n: usize) {
    let mut seen = vec![false; n];
    for a in &p.assignments {
        assert!(!a.is_empty());
        for &i in a {
            assert!(!seen[i], "index {i} assigned twice");
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "some index unassigned");
}

#[test]
fn huge_alpha_is_uniform() {
    let ds = balanced(10, 1000);
    let p = dirichlet_partition(&ds, 10, 1e6, 3).unwrap();
    let cell = 1000.0 / 10.0;
    for a in &p.assignments {
        for c in ds.class_counts(a) {
            assert!((c as f64 - cell).abs() <= 0.02 * cell, "count {c}");
        }
    }
}

#[test]
fn entropy_decreases_with_alpha() {
    let ds = balanced(10, 5000);
    let mean = |alpha: f64| -> Vec<f64> {
        (0..20)
            .map(|s| mean_client_entropy(&ds, &dirichlet_partition(&ds, 10, alpha, s).unwrap()))
            .collect()
    };
    let (a, b, c) = (mean(0.1), mean(0.5), mean(10.0));
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(avg(&a) < avg(&b) && avg(&b) < avg(&c), "{} {} {}", avg(&a), avg(&b), avg(&c));
    assert!(a.iter().zip(&b).filter(|(x, y)| x < y).count() >= 19);
}

#[test]
fn single_client_gets_everything() {
    let ds = balanced(3, 7);
    for scheme in [
        Scheme::Dirichlet { alpha: 0.1, overlap: false },
        Scheme::LowCs,
        Scheme::HighCs,
    ] {
        let p = partition(&ds, 1, scheme, 9).unwrap();
        assert_eq!(p.assignments, vec![(0..21).collect::<Vec<_>>()]);
    }
}

#[test]
fn low_cs_splits_every_class_evenly() {
    let ds = balanced(10, 100);
    let p = low_cs_partition(&ds, 2, 1).unwrap();
    for a in &p.assignments {
        assert_eq!(ds.class_counts(a), vec![50; 10]);
    }
    assert_disjoint_cover(&p, ds.len());
    assert!(matches!(low_cs_partition(&ds, 101, 1), Err(Error::Config(_))));
}

#[test]
fn high_cs_groups_contiguous_classes() {
    let ds = balanced(10, 20);
    let p = high_cs_partition(&ds, 2, 0).unwrap();
    let classes = |a: &[usize]| a.iter().map(|&i| ds.labels()[i]).collect::<BTreeSet<_>>();
    assert_eq!(classes(&p.assignments[0]), (0..5).collect());
    assert_eq!(classes(&p.assignments[1]), (5..10).collect());
    let p3 = high_cs_partition(&ds, 3, 0).unwrap();
    let sizes: Vec<usize> = p3.assignments.iter().map(|a| classes(a).len()).collect();
    assert_eq!(sizes, vec![4, 3, 3]);
    assert_disjoint_cover(&p3, ds.len());
    assert!(matches!(high_cs_partition(&ds, 11, 0), Err(Error::Config(_))));
}

#[test]
fn errors_on_bad_arguments() {
    let ds = balanced(2, 3);
    assert!(matches!(dirichlet_partition(&ds, 7, 1.0, 0), Err(Error::Config(_))));
    let err = dirichlet_partition(&ds, 2, -1.0, 0).unwrap_err();
    assert!(err.to_string().contains("partition.alpha must be > 0"), "{err}");
    assert!(dirichlet_partition(&ds, 2, 0.0, 0).is_err());
}

#[test]
fn manifest_round_trips_through_json() {
    let ds = balanced(4, 10);
    let p = dirichlet_partition(&ds, 3, 0.5, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partition.json");
    p.save(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["seed"], 12);
    assert_eq!(v["scheme"]["kind"], "dirichlet");
    assert_eq!(v["assignments"].as_array().unwrap().len(), 3);
    assert_eq!(Partition::load(&path).unwrap(), p);
}

#[test]
fn overlap_variant_draws_from_each_class() {
    let ds = balanced(5, 40);
    let p = dirichlet_overlap_partition(&ds, 4, 1e6, 2).unwrap();
    for a in &p.assignments {
        assert_eq!(ds.class_counts(a), vec![10; 5]);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn blobs_are_separable_by_nearest_centroid() {
    let ds = synth_blobs(4, 200, 16, 0.1, 5);
    let dim = 16;
    let mut centroids = vec![vec![0.0; dim]; 4];
    let counts = ds.class_counts(&(0..ds.len()).collect::<Vec<_>>());
    for i in 0..ds.len() {
        let c = ds.labels()[i];
        for (m, x) in centroids[c].iter_mut().zip(ds.features().row(i)) {
            *m += x / counts[c] as f64;
        }
    }
    let correct = (0..ds.len())
        .filter(|&i| {
            let x = ds.features().row(i);
            let d = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..4).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap();
            best == ds.labels()[i]
        })
        .count();
    assert_eq!(correct, ds.len());
}

fn label_strategy() -> impl Strategy<Value = (Vec<usize>, usize)> {
    (2usize..6).prop_flat_map(|c| (prop::collection::vec(0..c, 12..120), Just(c)))
}

proptest! {
    #[test]
    fn dirichlet_conserves_and_is_deterministic((labels, c) in label_strategy(), k in 1usize..8, alpha in 0.05f64..20.0, seed in any::<u64>()) {
        let ds = labelled(labels, c);
        let p = dirichlet_partition(&ds, k, alpha, seed).unwrap();
        prop_assert_eq!(p.total(), ds.len());
        assert_disjoint_cover(&p, ds.len());
        prop_assert_eq!(p, dirichlet_partition(&ds, k, alpha, seed).unwrap());
    }

    #[test]
    fn low_cs_balances_within_one((labels, c) in label_strategy(), k in 1usize..4, seed in any::<u64>()) {
        let ds = labelled(labels, c);
        match low_cs_partition(&ds, k, seed) {
            Ok(p) => {
                assert_disjoint_cover(&p, ds.len());
                let counts: Vec<Vec<usize>> = p.assignments.iter().map(|a| ds.class_counts(a)).collect();
                for class in 0..c {
                    let per: Vec<usize> = counts.iter().map(|v| v[class]).collect();
                    prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
                }
                prop_assert_eq!(p, low_cs_partition(&ds, k, seed).unwrap());
            }
            Err(e) => {
                let smallest = ds.class_counts(&(0..ds.len()).collect::<Vec<_>>()).into_iter().filter(|&n| n > 0).min().unwrap();
                prop_assert!(smallest < k, "{e}");
            }
        }
    }

    #[test]
    fn high_cs_sends_each_example_to_its_class_owner((labels, c) in label_strategy(), k in 1usize..6) {
        let ds = labelled(labels, c);
        if let Ok(p) = high_cs_partition(&ds, k, 0) {
            assert_disjoint_cover(&p, ds.len());
            let groups = fedmpr::data::partition::class_groups(c, k);
            for (owner, a) in p.assignments.iter().enumerate() {
                for &i in a {
                    prop_assert!(groups[owner].contains(&ds.labels()[i]));
                }
            }
        }
    }
}
