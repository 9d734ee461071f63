use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::fault::{self, FaultOp};
use super::{invalid, GradFn, Result, Tensor, TensorError};

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

struct GeluFn {
    inputs: [Tensor; 1],
}

impl GradFn for GeluFn {
    fn name(&self) -> &'static str {
        "gelu"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut gx: Vec<f64> = g
            .iter()
            .zip(self.inputs[0].data())
            .map(|(g, &x)| g * (std_normal_cdf(x) + x * std_normal_pdf(x)))
            .collect();
        fault::apply(FaultOp::Gelu, &mut gx);
        vec![Some(gx)]
    }
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v * std_normal_cdf(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, GeluFn { inputs: [x.clone()] })
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

struct BatchNormFn {
    train: bool,
    /// Normalized input.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    dims: (usize, usize, usize),
    inputs: [Tensor; 3],
}

impl GradFn for BatchNormFn {
    fn name(&self) -> &'static str {
        "batch_norm"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (batch, ch, plane) = self.dims;
        let gamma = self.inputs[1].data();
        let count = (batch * plane) as f64;
        let mut gx = vec![0.0; g.len()];
        let mut ggamma = vec![0.0; ch];
        let mut gbeta = vec![0.0; ch];
        let idx = |n: usize, c: usize| (n * ch + c) * plane;
        for c in 0..ch {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for n in 0..batch {
                let o = idx(n, c);
                for i in o..o + plane {
                    sg += g[i];
                    sgx += g[i] * self.xhat[i];
                }
            }
            ggamma[c] = sgx;
            gbeta[c] = sg;
            let k = gamma[c] * self.inv_std[c];
            for n in 0..batch {
                let o = idx(n, c);
                for i in o..o + plane {
                    gx[i] = if self.train {
                        k * (g[i] - sg / count - self.xhat[i] * sgx / count)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

/// Batch normalization over `[N,C,H,W]` (or `[C,H,W]`) with learnable
/// per-channel scale `gamma` and shift `beta`.
///
/// In [`BnMode::Train`] the biased batch variance normalizes and the running
/// estimates move by [`BN_MOMENTUM`] towards the batch mean and unbiased
/// variance.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &mut BnStats, mode: BnMode) -> Result<Tensor> {
    let (batch, ch, plane) = match *x.shape() {
        [c, h, w] => (1, c, h * w),
        [n, c, h, w] => (n, c, h * w),
        _ => return Err(invalid("batch_norm", format!("expected [N,C,H,W], got {:?}", x.shape()))),
    };
    for t in [gamma, beta] {
        if t.shape() != [ch] {
            return Err(TensorError::Shape {
                op: "batch_norm",
                lhs: x.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    if stats.mean.len() != ch || stats.var.len() != ch {
        return Err(invalid(
            "batch_norm",
            format!("running stats hold {} channels, input has {ch}", stats.mean.len()),
        ));
    }
    let src = x.data();
    let count = batch * plane;
    let idx = |n: usize, c: usize| (n * ch + c) * plane;
    let mut xhat = vec![0.0; src.len()];
    let mut inv_std = vec![0.0; ch];
    for c in 0..ch {
        let (mu, var) = match mode {
            BnMode::Train => {
                let mut s = 0.0;
                for n in 0..batch {
                    s += src[idx(n, c)..idx(n, c) + plane].iter().sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0;
                for n in 0..batch {
                    ss += src[idx(n, c)..idx(n, c) + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
                let var = ss / count as f64;
                let unbiased = if count > 1 { ss / (count - 1) as f64 } else { var };
                stats.mean[c] = (1.0 - BN_MOMENTUM) * stats.mean[c] + BN_MOMENTUM * mu;
                stats.var[c] = (1.0 - BN_MOMENTUM) * stats.var[c] + BN_MOMENTUM * unbiased;
                (mu, var)
            }
            BnMode::Eval => (stats.mean[c], stats.var[c]),
        };
        inv_std[c] = 1.0 / (var + BN_EPS).sqrt();
        for n in 0..batch {
            for i in idx(n, c)..idx(n, c) + plane {
                xhat[i] = (src[i] - mu) * inv_std[c];
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for n in 0..batch {
        for c in 0..ch {
            for i in idx(n, c)..idx(n, c) + plane {
                out[i] = gd[c] * xhat[i] + bd[c];
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        BatchNormFn {
            train: mode == BnMode::Train,
            xhat,
            inv_std,
            dims: (batch, ch, plane),
            inputs: [x.clone(), gamma.clone(), beta.clone()],
        },
    ))
}
