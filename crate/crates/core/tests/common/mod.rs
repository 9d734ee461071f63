#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;
use tfformer::tensor::{no_grad, Tensor};

pub fn rng(seed: u64) -> Pcg32 {
    Pcg32::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Pcg32, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut Pcg32, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), uniform(rng, n, -1.0, 1.0)).unwrap()
}

pub fn rand_leaf(rng: &mut Pcg32, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::leaf(shape.to_vec(), uniform(rng, n, -1.0, 1.0)).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` with respect to every input, compared against
/// the gradients `backward` leaves in the leaf slots. Returns the worst
/// relative error.
pub fn fd_check(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> Tensor) -> f64 {
    let h = 1e-4;
    let loss = f(inputs);
    loss.backward().unwrap();
    let mut worst: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = input.grad().unwrap_or_else(|| vec![0.0; input.numel()]);
        for j in 0..input.numel() {
            let eval = |delta: f64| {
                let mut data = input.to_vec();
                data[j] += delta;
                let mut probe: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
                probe[idx] = Tensor::from_vec(input.shape().to_vec(), data).unwrap();
                no_grad(|| f(&probe).item())
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Random linear functional of `t`, a generic scalar loss for checks.
pub fn probe_loss(t: &Tensor, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let weights = rand_tensor(&mut r, t.shape());
    tfformer::tensor::sum(&tfformer::tensor::mul(t, &weights).unwrap())
}
