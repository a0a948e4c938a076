mod common;

use common::{grad_check, random_batch};
use fedmpr::nn::zoo::{Architecture, Regularization};
use fedmpr::nn::{softmax_xent, LayerSpec, Mode, Model, NoiseScale, OptState};
use fedmpr::{seed, Error, Tensor};

fn dropout_model(width: usize, ratio: f64) -> Model {
    let layers = vec![
        LayerSpec::Dropout { ratio },
        LayerSpec::SoftmaxXentHead { classes: width },
    ];
    Model::new(&[width], layers, &mut seed::stream(0, &[])).unwrap()
}

#[test]
fn inference_disables_dropout_exactly() {
    let mut m = dropout_model(5, 0.2);
    m.set_mode(Mode::Inference);
    let x = Tensor::new(vec![1, 5], vec![0.1, -2.0, 3.0, 4.5, 0.0]).unwrap();
    let mut rng = seed::stream(1, &[]);
    let (y, _) = m.forward(&x, &mut rng).unwrap();
    assert_eq!(y.data(), x.data());
    assert_eq!(m.infer(&x).unwrap().data(), x.data());
}

#[test]
fn zero_ratios_are_identity_in_training() {
    let reg = Regularization { dropout: 0.0, noise: 0.0, noise_scale: NoiseScale::Relative };
    let arch = Architecture::Mlp { hidden: vec![6] };
    let m = arch.build(&[4], 3, reg, &mut seed::stream(2, &[])).unwrap();
    let x = random_batch(&[4], 5, &mut seed::stream(3, &[]));
    let (train, _) = m.forward(&x, &mut seed::stream(4, &[])).unwrap();
    assert!(train.data().iter().zip(m.infer(&x).unwrap().data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn inverted_dropout_is_unbiased() {
    let n = 1_000_000;
    let m = dropout_model(n, 0.5);
    let x = Tensor::filled(&[1, n], 1.0);
    let (y, _) = m.forward(&x, &mut seed::stream(5, &[])).unwrap();
    let mean = y.data().iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    // survivors carry exactly 1/(1-d)
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn weight_noise_has_relative_scale() {
    // x = e_0 picks column 0 of the (perturbed) weight, so outputs minus
    // clean outputs are samples of the noise on that column.
    let layers = vec![
        LayerSpec::WeightNoise { ratio: 0.4, scale: NoiseScale::Relative },
        LayerSpec::Dense { inputs: 2, outputs: 4000 },
        LayerSpec::SoftmaxXentHead { classes: 4000 },
    ];
    let m = Model::new(&[2], layers, &mut seed::stream(6, &[])).unwrap();
    let std_w = m.params().get("01.weight").unwrap().std();
    let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let clean = m.infer(&x).unwrap();
    let (noisy, cache) = m.forward(&x, &mut seed::stream(7, &[])).unwrap();
    let diffs: Vec<f64> = noisy.data().iter().zip(clean.data()).map(|(a, b)| a - b).collect();
    let var = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
    let ratio = var.sqrt() / (0.4 * std_w);
    assert!((ratio - 1.0).abs() < 0.05, "sigma ratio {ratio}");
    // params are not modified by the perturbation
    assert!(cache.realization().weight_noise(1).is_some());
    assert_eq!(m.infer(&x).unwrap(), clean);
}

#[test]
fn absolute_noise_scale_ignores_weight_magnitude() {
    let layers = vec![
        LayerSpec::WeightNoise { ratio: 0.3, scale: NoiseScale::Absolute },
        LayerSpec::Dense { inputs: 1, outputs: 20000 },
        LayerSpec::SoftmaxXentHead { classes: 20000 },
    ];
    let m = Model::new(&[1], layers, &mut seed::stream(8, &[])).unwrap();
    let (_, cache) = m.forward(&Tensor::filled(&[1, 1], 1.0), &mut seed::stream(9, &[])).unwrap();
    let eps = cache.realization().weight_noise(1).unwrap();
    let sd = (eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64).sqrt();
    assert!((sd - 0.3).abs() < 0.01, "sd {sd}");
}

#[test]
fn uniform_logits_loss_is_ln_classes() {
    let logits = Tensor::filled(&[3, 10], 0.7);
    let (loss, _) = softmax_xent(&logits, &[0, 4, 9]).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn softmax_gradient_matches_analytic_value() {
    let logits = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let (_, d) = softmax_xent(&logits, &[0]).unwrap();
    let e = std::f64::consts::E;
    let p0 = e / (e + 1.0);
    assert!((d.data()[0] - (p0 - 1.0)).abs() < 1e-9);
    assert!((d.data()[1] - (1.0 - p0)).abs() < 1e-9);
    assert!((d.data()[1] - 0.2689414213699951).abs() < 1e-9);
}

#[test]
fn single_dense_layer_gradients_are_outer_products() {
    let layers = vec![
        LayerSpec::Dense { inputs: 3, outputs: 2 },
        LayerSpec::SoftmaxXentHead { classes: 2 },
    ];
    let mut m = Model::new(&[3], layers, &mut seed::stream(10, &[])).unwrap();
    // weights chosen so logits are [1, 0] for x = [1, 0, 0]
    *m.params_mut().get_mut("00.weight").unwrap() = Tensor::new(vec![2, 3], vec![1.0, 0.3, -0.2, 0.0, 0.5, 0.1]).unwrap();
    let x = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
    let (logits, cache) = m.forward(&x, &mut seed::stream(0, &[])).unwrap();
    assert_eq!(logits.data(), &[1.0, 0.0]);
    let (_, g) = fedmpr::nn::loss_and_backward(&m, &logits, &[0], &cache).unwrap();
    let dw = g.get("00.weight").unwrap().data();
    let db = g.get("00.bias").unwrap().data();
    assert!((db[0] + 0.2689414213699951).abs() < 1e-9);
    assert!((dw[0] - db[0]).abs() < 1e-15 && dw[1] == 0.0 && dw[2] == 0.0);
    assert!((dw[3] - db[1]).abs() < 1e-15);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let reg = Regularization { dropout: 0.2, noise: 0.4, noise_scale: NoiseScale::Relative };
    let arch = Architecture::Mlp { hidden: vec![12, 8] };
    let m = arch.build(&[6], 4, reg, &mut seed::stream(11, &[])).unwrap();
    let mut rng = seed::stream(12, &[]);
    let x = random_batch(&[6], 8, &mut rng);
    let labels = [0, 1, 2, 3, 0, 1, 2, 3];
    let r = grad_check(&m, &x, &labels, 13, 1e-5);
    assert!(r.max_rel_err < 1e-4, "max rel err {}", r.max_rel_err);
    assert!(r.checked > 10 * r.skipped.max(1));
}

#[test]
fn cnn_gradients_match_finite_differences() {
    let reg = Regularization { dropout: 0.2, noise: 0.4, noise_scale: NoiseScale::Relative };
    let arch = Architecture::SmallCnn { channels: [2, 3] };
    let m = arch.build(&[1, 6, 6], 3, reg, &mut seed::stream(14, &[])).unwrap();
    let x = random_batch(&[1, 6, 6], 3, &mut seed::stream(15, &[]));
    let r = grad_check(&m, &x, &[0, 1, 2], 16, 1e-5);
    assert!(r.max_rel_err < 1e-4, "max rel err {}", r.max_rel_err);
}

#[test]
fn inference_is_bitwise_deterministic_and_mode_switch_keeps_params() {
    let arch = Architecture::SmallCnn { channels: [2, 2] };
    let reg = Regularization { dropout: 0.5, noise: 0.4, noise_scale: NoiseScale::Relative };
    let mut m = arch.build(&[1, 4, 4], 2, reg, &mut seed::stream(17, &[])).unwrap();
    let before = m.params().clone();
    let x = random_batch(&[1, 4, 4], 2, &mut seed::stream(18, &[]));
    m.set_mode(Mode::Inference);
    let a = m.forward(&x, &mut seed::stream(1, &[])).unwrap().0;
    let b = m.forward(&x, &mut seed::stream(2, &[])).unwrap().0;
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    m.set_mode(Mode::Training);
    let _ = m.forward(&x, &mut seed::stream(3, &[])).unwrap();
    m.set_mode(Mode::Inference);
    assert!(m.params().bitwise_eq(&before));
}

#[test]
fn shape_and_label_errors() {
    let arch = Architecture::Mlp { hidden: vec![3] };
    let m = arch.build(&[4], 2, Regularization::NONE, &mut seed::stream(19, &[])).unwrap();
    let wrong = Tensor::filled(&[2, 5], 0.0);
    assert!(matches!(m.forward(&wrong, &mut seed::stream(0, &[])), Err(Error::Config(_))));
    let logits = Tensor::filled(&[1, 2], 0.0);
    assert!(matches!(softmax_xent(&logits, &[2]), Err(Error::Input(_))));
    assert!(matches!(softmax_xent(&logits, &[0, 1]), Err(Error::Input(_))));
}

#[test]
fn non_finite_activation_names_layer() {
    let arch = Architecture::Mlp { hidden: vec![3] };
    let m = arch.build(&[2], 2, Regularization::NONE, &mut seed::stream(20, &[])).unwrap();
    let x = Tensor::new(vec![1, 2], vec![f64::INFINITY, 0.0]).unwrap();
    match m.infer(&x) {
        Err(Error::Numerical { layer, kind }) => assert_eq!((layer, kind), (0, "dense")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_layer_stacks_are_rejected() {
    let mut rng = seed::stream(0, &[]);
    let dangling_noise = vec![
        LayerSpec::Dense { inputs: 2, outputs: 2 },
        LayerSpec::WeightNoise { ratio: 0.1, scale: NoiseScale::Relative },
        LayerSpec::SoftmaxXentHead { classes: 2 },
    ];
    assert!(Model::new(&[2], dangling_noise, &mut rng).is_err());
    let bad_dims = vec![
        LayerSpec::Dense { inputs: 3, outputs: 2 },
        LayerSpec::SoftmaxXentHead { classes: 2 },
    ];
    assert!(Model::new(&[2], bad_dims, &mut rng).is_err());
    let no_head = vec![LayerSpec::Dense { inputs: 2, outputs: 2 }];
    assert!(Model::new(&[2], no_head, &mut rng).is_err());
    let bad_dropout = vec![LayerSpec::Dropout { ratio: 1.0 }, LayerSpec::SoftmaxXentHead { classes: 2 }];
    assert!(Model::new(&[2], bad_dropout, &mut rng).is_err());
}

#[test]
fn training_reduces_loss() {
    let arch = Architecture::Mlp { hidden: vec![8] };
    let mut m = arch.build(&[2], 2, Regularization::NONE, &mut seed::stream(21, &[])).unwrap();
    let x = Tensor::new(vec![4, 2], vec![1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0]).unwrap();
    let y = [0, 0, 1, 1];
    let mut opt = OptState::new(0.1, 0.9, m.params()).unwrap();
    let mut rng = seed::stream(0, &[]);
    let first = softmax_xent(&m.infer(&x).unwrap(), &y).unwrap().0;
    for _ in 0..200 {
        let (logits, cache) = m.forward(&x, &mut rng).unwrap();
        let (_, g) = fedmpr::nn::loss_and_backward(&m, &logits, &y, &cache).unwrap();
        let mut p = m.params().clone();
        opt.step(&mut p, &g).unwrap();
        m.set_params(p).unwrap();
    }
    let last = softmax_xent(&m.infer(&x).unwrap(), &y).unwrap().0;
    assert!(last < 0.05 * first, "{first} -> {last}");
}
