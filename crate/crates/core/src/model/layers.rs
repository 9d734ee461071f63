use rand_pcg::Pcg32;

use super::store::{BnId, Init, ParamId, ParamStore};
use super::ModelError;
use crate::tensor::{self, BnMode, Tensor};

type Result<T> = std::result::Result<T, ModelError>;

/// Square-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let weight = s.add(rng, format!("{name}.weight"), &[c_out, c_in, k, k], Init::He { fan_in: c_in * k * k });
        let bias = s.add(rng, format!("{name}.bias"), &[c_out], Init::Zeros);
        Conv { weight, bias, stride, padding: k / 2 }
    }

    pub fn zero_init(s: &mut ParamStore, rng: &mut Pcg32, name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        let weight = s.add(rng, format!("{name}.weight"), &[c_out, c_in, k, k], Init::Zeros);
        let bias = s.add(rng, format!("{name}.bias"), &[c_out], Init::Zeros);
        Conv { weight, bias, stride: 1, padding: k / 2 }
    }

    pub fn param_count(c_in: usize, c_out: usize, k: usize) -> usize {
        c_out * c_in * k * k + c_out
    }

    pub fn forward(&self, s: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::conv2d(x, s.get(self.weight), Some(s.get(self.bias)), self.stride, self.padding)?)
    }
}

/// 3×3 stride-2 transposed convolution that doubles the spatial extent.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl UpConv {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, c_in: usize, c_out: usize) -> Self {
        let weight = s.add(rng, format!("{name}.weight"), &[c_in, c_out, 3, 3], Init::He { fan_in: c_in * 9 });
        let bias = s.add(rng, format!("{name}.bias"), &[c_out], Init::Zeros);
        UpConv { weight, bias }
    }

    pub fn param_count(c_in: usize, c_out: usize) -> usize {
        c_in * c_out * 9 + c_out
    }

    pub fn forward(&self, s: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::conv_transpose2d(x, s.get(self.weight), Some(s.get(self.bias)), 2, 1, 1)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BnId,
}

impl BatchNorm {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, channels: usize) -> Self {
        let gamma = s.add(rng, format!("{name}.gamma"), &[channels], Init::Constant(1.0));
        let beta = s.add(rng, format!("{name}.beta"), &[channels], Init::Zeros);
        let stats = s.add_bn(format!("{name}.running"), channels);
        BatchNorm { gamma, beta, stats }
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward(&self, s: &ParamStore, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        let mut stats = s.bn_stats(self.stats);
        Ok(tensor::batch_norm(x, s.get(self.gamma), s.get(self.beta), &mut stats, mode)?)
    }
}

/// `[N, C, H, W]` → `[N, H·W, C]`.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(ModelError::shape("to_tokens", x.shape()));
    };
    Ok(tensor::transpose_last2(&tensor::reshape(x, &[n, c, h * w])?)?)
}

/// `[N, H·W, C]` → `[N, C, H, W]`.
pub fn from_tokens(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let &[n, _, c] = t.shape() else {
        return Err(ModelError::shape("from_tokens", t.shape()));
    };
    Ok(tensor::reshape(&tensor::transpose_last2(t)?, &[n, c, h, w])?)
}

/// Adds a `[C]` bias to every token of `[N, T, C]`.
fn add_token_bias(t: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let &[n, tokens, c] = t.shape() else {
        return Err(ModelError::shape("token_bias", t.shape()));
    };
    let b = tensor::reshape(bias, &[1, 1, c])?;
    let b = tensor::broadcast_axis(&tensor::broadcast_axis(&b, 1, tokens)?, 0, n)?;
    Ok(tensor::add(t, &b)?)
}

#[derive(Clone, Debug)]
struct Head {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    alpha: ParamId,
}

/// Multi-head token attention. Each head owns `d × d` query, key and value
/// maps over its slice of the channels and a learnable temperature; the
/// concatenated heads go through a `C × C` output projection with bias.
#[derive(Clone, Debug)]
pub struct Attention {
    heads: Vec<Head>,
    wo: ParamId,
    bo: ParamId,
    pub width: usize,
}

impl Attention {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(ModelError::Config {
                field: "heads".into(),
                msg: format!("{heads} heads do not divide width {width}"),
            });
        }
        let d = width / heads;
        let heads = (0..heads)
            .map(|i| Head {
                wq: s.add(rng, format!("{name}.Wq.head{i}"), &[d, d], Init::He { fan_in: d }),
                wk: s.add(rng, format!("{name}.Wk.head{i}"), &[d, d], Init::He { fan_in: d }),
                wv: s.add(rng, format!("{name}.Wv.head{i}"), &[d, d], Init::He { fan_in: d }),
                alpha: s.add(rng, format!("{name}.alpha.head{i}"), &[1], Init::Constant((d as f64).sqrt())),
            })
            .collect();
        let wo = s.add(rng, format!("{name}.Wo"), &[width, width], Init::Zeros);
        let bo = s.add(rng, format!("{name}.bo"), &[width], Init::Zeros);
        Ok(Attention { heads, wo, bo, width })
    }

    pub fn param_count(width: usize, heads: usize) -> usize {
        let d = width / heads;
        heads * (3 * d * d + 1) + width * width + width
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Attention of query tokens `q_src` over key/value tokens `kv_src`,
    /// both `[N, T, C]`.
    pub fn attend(&self, s: &ParamStore, q_src: &Tensor, kv_src: &Tensor) -> Result<Tensor> {
        let d = self.width / self.heads.len();
        for t in [q_src, kv_src] {
            if t.ndim() != 3 || t.shape()[2] != self.width {
                return Err(ModelError::shape("attention", t.shape()));
            }
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let qi = tensor::narrow(q_src, 2, i * d, d)?;
            let kvi = tensor::narrow(kv_src, 2, i * d, d)?;
            let q = tensor::matmul(&qi, s.get(head.wq))?;
            let k = tensor::matmul(&kvi, s.get(head.wk))?;
            let v = tensor::matmul(&kvi, s.get(head.wv))?;
            let scores = tensor::matmul(&q, &tensor::transpose_last2(&k)?)?;
            let weights = tensor::softmax(&tensor::div_scalar(&scores, s.get(head.alpha))?, 2)?;
            outs.push(tensor::matmul(&weights, &v)?);
        }
        let cat = if outs.len() == 1 { outs.pop().expect("one head") } else { tensor::concat(&outs, 2)? };
        add_token_bias(&tensor::matmul(&cat, s.get(self.wo))?, s.get(self.bo))
    }
}

/// Pointwise feed-forward: 1×1 conv, GELU, 1×1 conv.
#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Conv,
    down: Conv,
}

impl FeedForward {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, width: usize, expansion: usize) -> Self {
        FeedForward {
            up: Conv::new(s, rng, &format!("{name}.up"), width, width * expansion, 1, 1),
            down: Conv::zero_init(s, rng, &format!("{name}.down"), width * expansion, width, 1),
        }
    }

    pub fn param_count(width: usize, expansion: usize) -> usize {
        Conv::param_count(width, width * expansion, 1) + Conv::param_count(width * expansion, width, 1)
    }

    pub fn forward(&self, s: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.down.forward(s, &tensor::gelu(&self.up.forward(s, x)?))
    }
}

/// Guided attention block: attention over the spatial tokens of the boosted
/// input, gated elementwise by the guidance tensor, with residual and
/// feed-forward stages.
#[derive(Clone, Debug)]
pub struct Lcgab {
    pub attn: Attention,
    pub ffn: FeedForward,
}

impl Lcgab {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, width: usize, heads: usize, expansion: usize) -> Result<Self> {
        Ok(Lcgab {
            attn: Attention::new(s, rng, &format!("{name}.attn"), width, heads)?,
            ffn: FeedForward::new(s, rng, &format!("{name}.ffn"), width, expansion),
        })
    }

    pub fn param_count(width: usize, heads: usize, expansion: usize) -> usize {
        Attention::param_count(width, heads) + FeedForward::param_count(width, expansion)
    }

    /// `boosted`, `guide`: `[N, C, H, W]` of equal shape.
    pub fn forward(&self, s: &ParamStore, boosted: &Tensor, guide: &Tensor) -> Result<Tensor> {
        if boosted.shape() != guide.shape() {
            return Err(ModelError::mismatch("lcgab", boosted.shape(), guide.shape()));
        }
        let &[_, _, h, w] = boosted.shape() else {
            return Err(ModelError::shape("lcgab", boosted.shape()));
        };
        let tokens = to_tokens(boosted)?;
        let attn = from_tokens(&self.attn.attend(s, &tokens, &tokens)?, h, w)?;
        let y = tensor::add(boosted, &tensor::mul(&attn, guide)?)?;
        Ok(tensor::add(&y, &self.ffn.forward(s, &y)?)?)
    }
}
