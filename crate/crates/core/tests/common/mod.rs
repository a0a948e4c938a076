#![allow(dead_code)]

use fedmpr::nn::{loss_and_backward, softmax_xent, Model};
use fedmpr::seed;
use fedmpr::Tensor;
use rand::Rng;

pub fn random_batch(shape: &[usize], rows: usize, rng: &mut seed::Rng) -> Tensor {
    let mut full = vec![rows];
    full.extend_from_slice(shape);
    let n: usize = full.iter().product();
    Tensor::new(full, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU/max kink.
    pub skipped: usize,
}

/// Central finite differences (step `h`) of the cross-entropy loss against
/// the analytic gradients, with dropout/noise draws frozen by replay.
pub fn grad_check(model: &Model, x: &Tensor, labels: &[usize], draw_seed: u64, h: f64) -> GradCheck {
    let mut rng = seed::stream(draw_seed, &[]);
    let (logits, cache) = model.forward(x, &mut rng).unwrap();
    let (_, grads) = loss_and_backward(model, &logits, labels, &cache).unwrap();
    let draws = cache.realization().clone();
    let base_sig = cache.kink_signature(model);

    let eval = |m: &Model| {
        let (logits, cache) = m.forward_replay(x, &draws).unwrap();
        let (loss, _) = softmax_xent(&logits, labels).unwrap();
        (loss, cache.kink_signature(m))
    };

    let mut out = GradCheck { max_rel_err: 0.0, checked: 0, skipped: 0 };
    let names: Vec<String> = model.params().names().cloned().collect();
    let mut probe = model.clone();
    for name in names {
        let len = model.params().get(&name).unwrap().len();
        for i in 0..len {
            let orig = model.params().get(&name).unwrap().data()[i];
            probe.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let (lp, sp) = eval(&probe);
            probe.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let (lm, sm) = eval(&probe);
            probe.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                out.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.get(&name).unwrap().data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            out.max_rel_err = out.max_rel_err.max((analytic - numeric).abs() / denom);
            out.checked += 1;
        }
    }
    out
}
