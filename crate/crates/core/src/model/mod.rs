//! The enhancement network.
//!
//! An input image is split into luminance and chrominance; each component
//! passes through its own mapping stem and guided-attention encoder. The two
//! bottlenecks are fused by cross-attention, a joint decoder driven by the
//! summed skips reconstructs an RGB image, and a refinement block re-splits
//! that reconstruction to add a residual correction.

mod blocks;
mod checkpoint;
mod layers;
mod store;

use rand::SeedableRng;
use rand_pcg::Pcg32;

pub use blocks::{Decoder, Encoded, Encoder, Lccab, Lcgrb, LcMap};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{from_tokens, to_tokens, Attention, BatchNorm, Conv, FeedForward, Lcgab, UpConv};
pub use store::{random_entry, BnId, Init, ParamId, ParamStore};

use crate::color::{self, RgbImage};
use crate::tensor::{self, no_grad, BnMode, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("checkpoint config differs from the expected config: {}", .0.join("; "))]
    ConfigMismatch(Vec<String>),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub(crate) fn shape(op: &'static str, shape: &[usize]) -> Self {
        ModelError::Tensor(TensorError::Invalid {
            op,
            msg: format!("unexpected shape {shape:?}"),
        })
    }

    pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        ModelError::Tensor(TensorError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        })
    }
}

type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Width of the mapping stems and the first encoder stage.
    pub base_width: usize,
    /// Number of stride-2 downsamplings per encoder.
    pub stages: usize,
    /// Attention heads at each encoder/decoder stage.
    pub heads_per_stage: Vec<usize>,
    /// Heads of the bottleneck cross-attention block.
    pub bottleneck_heads: usize,
    pub lcgab_per_stage: usize,
    /// Channels each LC component is lifted to in the refinement block.
    pub refine_width: usize,
    pub refine_heads: usize,
    pub ffn_expansion: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 40,
            stages: 3,
            heads_per_stage: vec![1, 2, 4],
            bottleneck_heads: 8,
            lcgab_per_stage: 1,
            refine_width: 20,
            refine_heads: 1,
            ffn_expansion: 2,
        }
    }
}

pub const CONFIG_KEYS: [&str; 8] = [
    "base_width",
    "stages",
    "heads_per_stage",
    "bottleneck_heads",
    "lcgab_per_stage",
    "refine_width",
    "refine_heads",
    "ffn_expansion",
];

impl ModelConfig {
    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn bottleneck_width(&self) -> usize {
        self.stage_width(self.stages)
    }

    /// Spatial extents fed to the network are padded to a multiple of this.
    pub fn input_multiple(&self) -> usize {
        1 << self.stages
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(ModelError::Config { field: field.into(), msg });
        for (field, v) in [
            ("base_width", self.base_width),
            ("stages", self.stages),
            ("bottleneck_heads", self.bottleneck_heads),
            ("lcgab_per_stage", self.lcgab_per_stage),
            ("refine_width", self.refine_width),
            ("refine_heads", self.refine_heads),
            ("ffn_expansion", self.ffn_expansion),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        if self.stages > 8 {
            return bad("stages", format!("{} is outside 1..=8", self.stages));
        }
        if self.heads_per_stage.len() != self.stages {
            return bad(
                "heads_per_stage",
                format!("has {} entries, expected one per stage ({})", self.heads_per_stage.len(), self.stages),
            );
        }
        for (st, &h) in self.heads_per_stage.iter().enumerate() {
            if h == 0 || !self.stage_width(st).is_multiple_of(h) {
                return bad("heads_per_stage", format!("{h} heads do not divide stage {st} width {}", self.stage_width(st)));
            }
        }
        if !self.bottleneck_width().is_multiple_of(self.bottleneck_heads) {
            return bad(
                "bottleneck_heads",
                format!("{} heads do not divide width {}", self.bottleneck_heads, self.bottleneck_width()),
            );
        }
        if !(2 * self.refine_width).is_multiple_of(self.refine_heads) {
            return bad(
                "refine_heads",
                format!("{} heads do not divide width {}", self.refine_heads, 2 * self.refine_width),
            );
        }
        Ok(())
    }

    /// Closed-form number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        LcMap::param_count(1, self.base_width)
            + LcMap::param_count(3, self.base_width)
            + 2 * Encoder::param_count(self)
            + Lccab::param_count(self.bottleneck_width(), self.bottleneck_heads)
            + Decoder::param_count(self)
            + Lcgrb::param_count(self)
    }

    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let heads: Vec<String> = self.heads_per_stage.iter().map(|h| h.to_string()).collect();
        let values = [
            self.base_width.to_string(),
            self.stages.to_string(),
            heads.join(","),
            self.bottleneck_heads.to_string(),
            self.lcgab_per_stage.to_string(),
            self.refine_width.to_string(),
            self.refine_heads.to_string(),
            self.ffn_expansion.to_string(),
        ];
        CONFIG_KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| ModelError::Config {
                field: key.into(),
                msg: format!("expected a non-negative integer, got {v:?}"),
            })
        };
        match key {
            "base_width" => self.base_width = num(value)?,
            "stages" => self.stages = num(value)?,
            "heads_per_stage" => self.heads_per_stage = value.split(',').map(num).collect::<Result<_>>()?,
            "bottleneck_heads" => self.bottleneck_heads = num(value)?,
            "lcgab_per_stage" => self.lcgab_per_stage = num(value)?,
            "refine_width" => self.refine_width = num(value)?,
            "refine_heads" => self.refine_heads = num(value)?,
            "ffn_expansion" => self.ffn_expansion = num(value)?,
            _ => {
                return Err(ModelError::Config {
                    field: key.into(),
                    msg: "unknown model config key".into(),
                })
            }
        }
        Ok(())
    }

    /// Parses the output of [`ModelConfig::to_text`]; every key is required.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| ModelError::Corrupt(format!("bad config line {line:?}")))?;
            cfg.set(k.trim(), v)?;
            seen.push(k.trim().to_string());
        }
        if let Some(missing) = CONFIG_KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(ModelError::Config {
                field: missing.to_string(),
                msg: "missing from config block".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Human-readable list of differing fields, `field: ours != theirs`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let ours = self.to_text();
        let theirs = other.to_text();
        ours.lines()
            .zip(theirs.lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| {
                let (k, va) = a.split_once(" = ").expect("to_text format");
                let (_, vb) = b.split_once(" = ").expect("to_text format");
                format!("{k}: {va} != {vb}")
            })
            .collect()
    }
}

/// Training or inference behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; raw outputs.
    Train,
    /// Running statistics; outputs clamped to `[0, 1]`.
    Eval,
}

/// Both network outputs, `[N, 3, H, W]`.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub reconstruction: Tensor,
    pub refined: Tensor,
}

/// Intermediate tensors of one forward pass at padded resolution.
#[derive(Clone, Debug)]
pub struct Trace {
    pub bottleneck_l: Tensor,
    pub bottleneck_c: Tensor,
    pub fused: Tensor,
    pub outputs: Outputs,
}

#[derive(Debug)]
pub struct TfFormerModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub lcmap_l: LcMap,
    pub lcmap_c: LcMap,
    pub enc_l: Encoder,
    pub enc_c: Encoder,
    pub lccab: Lccab,
    pub decoder: Decoder,
    pub lcgrb: Lcgrb,
}

impl TfFormerModel {
    /// Freshly initialised model; the same seed always gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Pcg32::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let w = config.base_width;
        let lcmap_l = LcMap::new(&mut s, &mut rng, "lcmapL", 1, w);
        let lcmap_c = LcMap::new(&mut s, &mut rng, "lcmapC", 3, w);
        let enc_l = Encoder::new(&mut s, &mut rng, "encL", &config)?;
        let enc_c = Encoder::new(&mut s, &mut rng, "encC", &config)?;
        let lccab = Lccab::new(&mut s, &mut rng, "lccab", config.bottleneck_width(), config.bottleneck_heads)?;
        let decoder = Decoder::new(&mut s, &mut rng, "dec", &config)?;
        let lcgrb = Lcgrb::new(&mut s, &mut rng, "lcgrb", &config)?;
        Ok(TfFormerModel {
            config,
            store: s,
            lcmap_l,
            lcmap_c,
            enc_l,
            enc_c,
            lccab,
            decoder,
            lcgrb,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Runs the network on `[N, 3, H, W]` whose extents are multiples of
    /// [`ModelConfig::input_multiple`], keeping every intermediate.
    pub fn trace(&self, x: &Tensor, mode: Mode) -> Result<Trace> {
        self.trace_with(&self.store, x, mode)
    }

    /// [`Self::trace`] with parameters read from `s`, which must have been
    /// built for the same config.
    pub fn trace_with(&self, s: &ParamStore, x: &Tensor, mode: Mode) -> Result<Trace> {
        let m = self.config.input_multiple();
        let &[_, 3, h, w] = x.shape() else {
            return Err(ModelError::shape("forward", x.shape()));
        };
        if h % m != 0 || w % m != 0 {
            return Err(ModelError::Config {
                field: "input".into(),
                msg: format!("extent {h}x{w} is not a multiple of {m}"),
            });
        }
        let bn = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        };
        let lc = color::decompose_tensor(x)?;
        let (f_l, b_l) = self.lcmap_l.forward(s, x, &lc.luminance, bn)?;
        let (f_c, b_c) = self.lcmap_c.forward(s, x, &lc.chrominance, bn)?;
        let el = self.enc_l.forward(s, &b_l, &f_l)?;
        let ec = self.enc_c.forward(s, &b_c, &f_c)?;
        let fused = self.lccab.forward(s, &el.bottleneck, &ec.bottleneck)?;
        let reconstruction = self.decoder.forward(s, &fused, &el.skips, &ec.skips)?;
        let refined = self.lcgrb.forward(s, &reconstruction)?;
        Ok(Trace {
            bottleneck_l: el.bottleneck,
            bottleneck_c: ec.bottleneck,
            fused,
            outputs: Outputs { reconstruction, refined },
        })
    }

    /// Forward pass on any `[3, H, W]` or `[N, 3, H, W]` input: reflect-pads
    /// to the required multiple, runs the network and crops back. In
    /// [`Mode::Eval`] both outputs are clamped to `[0, 1]`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Outputs> {
        let batched = match x.shape() {
            &[3, h, w] if h > 0 && w > 0 => tensor::reshape(x, &[1, 3, h, w])?,
            &[_, 3, h, w] if h > 0 && w > 0 => x.clone(),
            s => return Err(ModelError::shape("forward", s)),
        };
        let (h, w) = (batched.shape()[2], batched.shape()[3]);
        let m = self.config.input_multiple();
        let padded = tensor::pad_reflect(&batched, h.next_multiple_of(m) - h, w.next_multiple_of(m) - w)?;
        let out = self.trace(&padded, mode)?.outputs;
        let finish = |t: &Tensor| -> Result<Tensor> {
            let t = tensor::crop(t, h, w)?;
            let t = if mode == Mode::Eval { tensor::clamp(&t, 0.0, 1.0) } else { t };
            Ok(if x.ndim() == 3 { tensor::reshape(&t, &[3, h, w])? } else { t })
        };
        Ok(Outputs {
            reconstruction: finish(&out.reconstruction)?,
            refined: finish(&out.refined)?,
        })
    }

    /// Inference on a single image without gradient tracking.
    pub fn enhance(&self, img: &RgbImage) -> Result<(RgbImage, RgbImage)> {
        let out = no_grad(|| self.forward(img.pixels(), Mode::Eval))?;
        Ok((RgbImage::new(out.reconstruction)?, RgbImage::new(out.refined)?))
    }
}
