//! Central finite differences against reverse-mode gradients.

use rand::Rng;
use wordlm::numerics::{ops, Tensor};
use wordlm::rng;

use super::reference::Reference;

/// `‖a − b‖ / max(‖a‖, ‖b‖)` with a floor for all-zero gradients.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f32) -> Tensor {
    let mut r = rng::stream(seed, "gradcheck", shape.iter().product::<usize>() as u64);
    let n = shape.iter().product();
    Tensor::parameter(shape, (0..n).map(|_| (r.random::<f32>() * 2.0 - 1.0) * scale).collect()).unwrap()
}

/// Checks `f` through the scalar `Σ wᵢ·outᵢ` with fixed random weights;
/// returns the aggregate relative error over every input entry.
pub fn check_op<F>(inputs: &[Tensor], f: F, step: f32) -> f64
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let out = f(inputs);
    let mut r = rng::stream(17, "gradcheck-weights", out.numel() as u64);
    let weights: Vec<f32> = (0..out.numel()).map(|_| r.random::<f32>() * 2.0 - 1.0).collect();
    let w = Tensor::new(out.shape(), weights.clone()).unwrap();
    inputs.iter().for_each(Tensor::zero_grad);
    ops::sum(&ops::mul(&out, &w).unwrap()).backward().unwrap();

    let objective = |inputs: &[Tensor]| -> f64 {
        f(inputs)
            .to_vec()
            .iter()
            .zip(&weights)
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for t in inputs.iter().filter(|t| t.requires_grad()) {
        let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        for i in 0..t.numel() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + step;
            let plus = objective(inputs);
            t.data_mut()[i] = orig - step;
            let minus = objective(inputs);
            t.data_mut()[i] = orig;
            let actual_step = ((orig + step) as f64) - ((orig - step) as f64);
            numeric.push((plus - minus) / actual_step);
            analytic.push(g[i] as f64);
        }
    }
    relative_error(&analytic, &numeric)
}

/// Central differences of the f64 reference loss for up to `per_tensor`
/// entries of every trainable tensor, against the given gradients.
pub fn check_model(
    reference: &Reference,
    grads: &[(String, Vec<f32>)],
    seqs: &[Vec<u32>],
    targets: &[(usize, usize, u32)],
    vocab: &[u32],
    per_tensor: usize,
    step: f64,
) -> Vec<(String, f64)> {
    let mut r = rng::stream(5, "model-gradcheck", 0);
    grads
        .iter()
        .map(|(name, g)| {
            let n = g.len();
            let idx: Vec<usize> = if n <= per_tensor {
                (0..n).collect()
            } else {
                rand::seq::index::sample(&mut r, n, per_tensor).into_vec()
            };
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for i in idx {
                let plus = reference.perturbed(name, i, step).mlm_loss(seqs, targets, vocab);
                let minus = reference.perturbed(name, i, -step).mlm_loss(seqs, targets, vocab);
                numeric.push((plus - minus) / (2.0 * step));
                analytic.push(g[i] as f64);
            }
            (name.clone(), relative_error(&analytic, &numeric))
        })
        .collect()
}
