use fedmpr::nn::{LayerSpec, Model, Params};
use fedmpr::pruning::{apply_mask, magnitude_threshold, prune_weights, sparsity, PruneMask};
use fedmpr::{seed, Tensor};
use proptest::prelude::*;

/// Textbook linear-interpolation percentile on a fully sorted copy.
fn oracle_percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    v.sort_by(f64::total_cmp);
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn two_layer(w0: Vec<f64>, w1: Vec<f64>) -> Model {
    // 3 -> w0.len()/3 -> w1.len()/(w0.len()/3) shaped so that data fits
    let hidden = w0.len() / 3;
    let out = w1.len() / hidden;
    let layers = vec![
        LayerSpec::Dense { inputs: 3, outputs: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: hidden, outputs: out },
        LayerSpec::SoftmaxXentHead { classes: out },
    ];
    let mut m = Model::new(&[3], layers, &mut seed::stream(0, &[])).unwrap();
    let p = m.params_mut();
    *p.get_mut("00.weight").unwrap() = Tensor::new(vec![hidden, 3], w0).unwrap();
    *p.get_mut("02.weight").unwrap() = Tensor::new(vec![out, hidden], w1).unwrap();
    *p.get_mut("00.bias").unwrap() = Tensor::filled(&[hidden], 0.125);
    *p.get_mut("02.bias").unwrap() = Tensor::filled(&[out], -0.5);
    m
}

fn weight_values() -> impl Strategy<Value = f64> {
    // small integer grid makes ties common
    prop_oneof![(-4i32..=4).prop_map(|k| k as f64 * 0.25), -2.0f64..2.0]
}

fn model_strategy() -> impl Strategy<Value = Model> {
    (1usize..6, 1usize..5).prop_flat_map(|(hidden, out)| {
        (
            prop::collection::vec(weight_values(), hidden * 3),
            prop::collection::vec(weight_values(), hidden * out),
        )
            .prop_map(|(a, b)| two_layer(a, b))
    })
}

fn weights(m: &Model) -> Vec<(String, Vec<f64>)> {
    m.maskable()
        .into_iter()
        .map(|n| {
            let v = m.params().get(&n).unwrap().data().to_vec();
            (n, v)
        })
        .collect()
}

proptest! {
    #[test]
    fn threshold_matches_sorting_oracle(v in prop::collection::vec(-10.0f64..10.0, 1..200), p in 0.0f64..=1.0) {
        let fast = magnitude_threshold(&v, p).unwrap();
        let slow = oracle_percentile(&v, p);
        prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn pruning_matches_oracle_per_tensor(model in model_strategy(), p in 0.01f64..0.99) {
        let before = weights(&model);
        let biases: Params = model.params().iter()
            .filter(|(n, _)| n.ends_with("bias"))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        let mut m = model.clone();
        let mask = prune_weights(&mut m, p).unwrap();
        for ((name, old), (_, new)) in before.iter().zip(weights(&m)) {
            let thr = oracle_percentile(old, p);
            let m_t = mask.get(name).unwrap().data();
            let n = old.len();
            for i in 0..n {
                let keep = old[i].abs() > thr;
                prop_assert_eq!(new[i], if keep { old[i] } else { 0.0 });
                prop_assert_eq!(m_t[i], if keep { 1.0 } else { 0.0 });
            }
            // everything at or below the interpolation point's lower rank goes
            let zeros = new.iter().filter(|&&w| w == 0.0).count();
            let guaranteed = (p * (n - 1) as f64).floor() as usize + 1;
            prop_assert!(zeros >= guaranteed, "{name}: {zeros} zeros < {guaranteed}");
        }
        for (name, b) in biases.iter() {
            prop_assert!(m.params().get(name).unwrap().data() == b.data());
        }
        // the model's zero pattern is exactly the mask's
        let report = sparsity(&m);
        let kept: usize = mask.iter().map(|(_, t)| t.data().iter().filter(|&&v| v == 1.0).count()).sum();
        prop_assert_eq!(report.total - report.zeros, kept);
    }

    #[test]
    fn pruning_is_idempotent(model in model_strategy(), p in 0.01f64..0.99) {
        let mut m = model;
        prune_weights(&mut m, p).unwrap();
        let once = m.params().clone();
        prune_weights(&mut m, p).unwrap();
        prop_assert!(m.params().bitwise_eq(&once));
    }

    #[test]
    fn masking_with_own_mask_is_a_no_op(model in model_strategy(), p in 0.01f64..0.99) {
        let mut m = model;
        let mask = prune_weights(&mut m, p).unwrap();
        let pruned = m.params().clone();
        apply_mask(&mut m, &mask).unwrap();
        prop_assert!(m.params().bitwise_eq(&pruned));
        let round_trip = PruneMask::from_params(&m, mask.to_params()).unwrap();
        prop_assert_eq!(round_trip, mask);
    }

    #[test]
    fn sparsity_counts_zeros(model in model_strategy()) {
        let report = sparsity(&model);
        let all: Vec<f64> = weights(&model).into_iter().flat_map(|(_, v)| v).collect();
        let zeros = all.iter().filter(|&&w| w == 0.0).count();
        prop_assert_eq!(report.zeros, zeros);
        prop_assert_eq!(report.total, all.len());
        prop_assert!((report.overall - zeros as f64 / all.len() as f64).abs() < 1e-15);
    }
}

#[test]
fn large_tensor_falls_short_of_p_by_less_than_one_element() {
    // distinct magnitudes: exactly floor(p (n-1)) + 1 entries are removed
    let n = 32768;
    let w: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let layers = vec![
        LayerSpec::Dense { inputs: n, outputs: 1 },
        LayerSpec::SoftmaxXentHead { classes: 1 },
    ];
    let mut m = Model::new(&[n], layers, &mut seed::stream(0, &[])).unwrap();
    *m.params_mut().get_mut("00.weight").unwrap() = Tensor::new(vec![1, n], w).unwrap();
    prune_weights(&mut m, 0.4).unwrap();
    let zeros = sparsity(&m).zeros;
    assert_eq!(zeros, (0.4 * (n - 1) as f64).floor() as usize + 1);
    assert!((zeros as f64 / n as f64 - 0.4).abs() < 1.0 / n as f64);
}
