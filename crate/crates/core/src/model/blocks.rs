use rand_pcg::Pcg32;

use super::layers::{from_tokens, to_tokens, Attention, BatchNorm, Conv, Lcgab, UpConv};
use super::store::ParamStore;
use super::{ModelConfig, ModelError};
use crate::color;
use crate::tensor::{self, BnMode, Tensor};

type Result<T> = std::result::Result<T, ModelError>;

/// Mapping stem: three conv–BN–GELU layers over the image concatenated with
/// one LC component. The third layer yields the guidance features `F`; a
/// parallel 3×3 conv on the second layer yields the boosted map `I_B`.
#[derive(Clone, Debug)]
pub struct LcMap {
    layers: Vec<(Conv, BatchNorm)>,
    boost: Conv,
    pub component_channels: usize,
}

impl LcMap {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, component_channels: usize, width: usize) -> Self {
        let mut c_in = 3 + component_channels;
        let layers = (0..3)
            .map(|i| {
                let conv = Conv::new(s, rng, &format!("{name}.conv{i}"), c_in, width, 3, 1);
                let bn = BatchNorm::new(s, rng, &format!("{name}.bn{i}"), width);
                c_in = width;
                (conv, bn)
            })
            .collect();
        let boost = Conv::new(s, rng, &format!("{name}.boost"), width, width, 3, 1);
        LcMap { layers, boost, component_channels }
    }

    pub fn param_count(component_channels: usize, width: usize) -> usize {
        let first = Conv::param_count(3 + component_channels, width, 3);
        first + 3 * Conv::param_count(width, width, 3) + 3 * BatchNorm::param_count(width)
    }

    /// `img`: `[N,3,H,W]`, `component`: `[N,c,H,W]`. Returns `(F, I_B)`.
    pub fn forward(&self, s: &ParamStore, img: &Tensor, component: &Tensor, mode: BnMode) -> Result<(Tensor, Tensor)> {
        let (is, cs) = (img.shape(), component.shape());
        if is.len() != 4 || cs.len() != 4 || is[0] != cs[0] || is[2..] != cs[2..] || cs[1] != self.component_channels {
            return Err(ModelError::mismatch("lc_map", is, cs));
        }
        let mut x = tensor::concat(&[img.clone(), component.clone()], 1)?;
        let mut second = None;
        for (i, (conv, bn)) in self.layers.iter().enumerate() {
            x = tensor::gelu(&bn.forward(s, &conv.forward(s, &x)?, mode)?);
            if i == 1 {
                second = Some(x.clone());
            }
        }
        let boosted = self.boost.forward(s, &second.expect("three layers"))?;
        Ok((x, boosted))
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    blocks: Vec<Lcgab>,
    down_feature: Conv,
    down_guide: Option<Conv>,
}

/// One encoder branch: per stage a run of LCGABs followed by stride-2
/// convolutions that double the width of the feature and guidance paths.
#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<EncoderStage>,
}

/// Bottleneck features and the pre-downsampling output of every stage.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bottleneck: Tensor,
    pub skips: Vec<Tensor>,
}

impl Encoder {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(cfg.stages);
        for st in 0..cfg.stages {
            let width = cfg.stage_width(st);
            let blocks = (0..cfg.lcgab_per_stage)
                .map(|b| {
                    let block_name = format!("{name}.stage{st}.lcgab{b}");
                    Lcgab::new(s, rng, &block_name, width, cfg.heads_per_stage[st], cfg.ffn_expansion)
                })
                .collect::<Result<_>>()?;
            let down_feature = Conv::new(s, rng, &format!("{name}.stage{st}.down_feature"), width, 2 * width, 3, 2);
            // the bottleneck has no consumer for a downsampled guidance map
            let down_guide = (st + 1 < cfg.stages)
                .then(|| Conv::new(s, rng, &format!("{name}.stage{st}.down_guide"), width, 2 * width, 3, 2));
            stages.push(EncoderStage { blocks, down_feature, down_guide });
        }
        Ok(Encoder { stages })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        (0..cfg.stages)
            .map(|st| {
                let w = cfg.stage_width(st);
                let blocks = cfg.lcgab_per_stage * Lcgab::param_count(w, cfg.heads_per_stage[st], cfg.ffn_expansion);
                let downs = if st + 1 < cfg.stages { 2 } else { 1 };
                blocks + downs * Conv::param_count(w, 2 * w, 3)
            })
            .sum()
    }

    pub fn forward(&self, s: &ParamStore, boosted: &Tensor, guide: &Tensor) -> Result<Encoded> {
        let mut x = boosted.clone();
        let mut g = guide.clone();
        let mut skips = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(s, &x, &g)?;
            }
            skips.push(x.clone());
            x = stage.down_feature.forward(s, &x)?;
            if let Some(down) = &stage.down_guide {
                g = down.forward(s, &g)?;
            }
        }
        Ok(Encoded { bottleneck: x, skips })
    }
}

/// Cross-attention fusion of the two bottlenecks: self-attention on each,
/// then luminance queries over chrominance keys and values.
#[derive(Clone, Debug)]
pub struct Lccab {
    pub self_l: Attention,
    pub self_c: Attention,
    pub cross: Attention,
}

impl Lccab {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Lccab {
            self_l: Attention::new(s, rng, &format!("{name}.self_l"), width, heads)?,
            self_c: Attention::new(s, rng, &format!("{name}.self_c"), width, heads)?,
            cross: Attention::new(s, rng, &format!("{name}.cross"), width, heads)?,
        })
    }

    pub fn param_count(width: usize, heads: usize) -> usize {
        3 * Attention::param_count(width, heads)
    }

    pub fn forward(&self, s: &ParamStore, e_l: &Tensor, e_c: &Tensor) -> Result<Tensor> {
        if e_l.shape() != e_c.shape() {
            return Err(ModelError::mismatch("lccab", e_l.shape(), e_c.shape()));
        }
        let &[_, _, h, w] = e_l.shape() else {
            return Err(ModelError::shape("lccab", e_l.shape()));
        };
        let tl = to_tokens(e_l)?;
        let tc = to_tokens(e_c)?;
        let a_l = tensor::add(&tl, &self.self_l.attend(s, &tl, &tl)?)?;
        let a_c = tensor::add(&tc, &self.self_c.attend(s, &tc, &tc)?)?;
        let a_lc = tensor::add(&a_l, &self.cross.attend(s, &a_l, &a_c)?)?;
        from_tokens(&a_lc, h, w)
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: UpConv,
    blocks: Vec<Lcgab>,
}

/// Joint decoder: per stage an upsampling transposed conv, injection of the
/// summed luminance and chrominance skips, and LCGABs guided by that sum;
/// a final 3×3 conv produces the RGB reconstruction.
#[derive(Clone, Debug)]
pub struct Decoder {
    stages: Vec<DecoderStage>,
    head: Conv,
}

impl Decoder {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(cfg.stages);
        for st in (0..cfg.stages).rev() {
            let width = cfg.stage_width(st);
            let up = UpConv::new(s, rng, &format!("{name}.stage{st}.up"), 2 * width, width);
            let blocks = (0..cfg.lcgab_per_stage)
                .map(|b| {
                    let block_name = format!("{name}.stage{st}.lcgab{b}");
                    Lcgab::new(s, rng, &block_name, width, cfg.heads_per_stage[st], cfg.ffn_expansion)
                })
                .collect::<Result<_>>()?;
            stages.push(DecoderStage { up, blocks });
        }
        let head = Conv::new(s, rng, &format!("{name}.out_head"), cfg.base_width, 3, 3, 1);
        Ok(Decoder { stages, head })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let stages: usize = (0..cfg.stages)
            .map(|st| {
                let w = cfg.stage_width(st);
                UpConv::param_count(2 * w, w)
                    + cfg.lcgab_per_stage * Lcgab::param_count(w, cfg.heads_per_stage[st], cfg.ffn_expansion)
            })
            .sum();
        stages + Conv::param_count(cfg.base_width, 3, 3)
    }

    /// `skips_*` are ordered shallow to deep, as the encoder emits them.
    pub fn forward(&self, s: &ParamStore, fused: &Tensor, skips_l: &[Tensor], skips_c: &[Tensor]) -> Result<Tensor> {
        if skips_l.len() != self.stages.len() || skips_c.len() != self.stages.len() {
            return Err(ModelError::Config {
                field: "stages".into(),
                msg: format!(
                    "decoder has {} stages but received {} and {} skips",
                    self.stages.len(),
                    skips_l.len(),
                    skips_c.len()
                ),
            });
        }
        let mut x = fused.clone();
        for (stage, (sl, sc)) in self.stages.iter().zip(skips_l.iter().rev().zip(skips_c.iter().rev())) {
            x = stage.up.forward(s, &x)?;
            let guide = tensor::add(sl, sc)?;
            if x.shape() != guide.shape() {
                return Err(ModelError::mismatch("decode", x.shape(), guide.shape()));
            }
            x = tensor::add(&x, &guide)?;
            for block in &stage.blocks {
                x = block.forward(s, &x, &guide)?;
            }
        }
        self.head.forward(s, &x)
    }
}

/// Refinement: re-decompose the reconstruction, lift each component to
/// half the refinement width, attend over the concatenation and add a
/// zero-initialised 3-channel correction.
#[derive(Clone, Debug)]
pub struct Lcgrb {
    lift_l: Conv,
    lift_c: Conv,
    block: Lcgab,
    out: Conv,
}

impl Lcgrb {
    pub fn new(s: &mut ParamStore, rng: &mut Pcg32, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let half = cfg.refine_width;
        Ok(Lcgrb {
            lift_l: Conv::new(s, rng, &format!("{name}.lift_l"), 1, half, 3, 1),
            lift_c: Conv::new(s, rng, &format!("{name}.lift_c"), 3, half, 3, 1),
            block: Lcgab::new(s, rng, &format!("{name}.lcgab"), 2 * half, cfg.refine_heads, cfg.ffn_expansion)?,
            out: Conv::zero_init(s, rng, &format!("{name}.out"), 2 * half, 3, 3),
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let half = cfg.refine_width;
        Conv::param_count(1, half, 3)
            + Conv::param_count(3, half, 3)
            + Lcgab::param_count(2 * half, cfg.refine_heads, cfg.ffn_expansion)
            + Conv::param_count(2 * half, 3, 3)
    }

    pub fn forward(&self, s: &ParamStore, rec: &Tensor) -> Result<Tensor> {
        let lc = color::decompose_tensor(rec)?;
        let r = tensor::concat(
            &[self.lift_l.forward(s, &lc.luminance)?, self.lift_c.forward(s, &lc.chrominance)?],
            1,
        )?;
        let r = self.block.forward(s, &r, &r)?;
        Ok(tensor::add(rec, &self.out.forward(s, &r)?)?)
    }
}
