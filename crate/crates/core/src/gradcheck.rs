//! Finite-difference verification of the analytic gradients of every
//! network block, the losses and the assembled model.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::model::{
    random_entry, Decoder, Encoder, LcMap, Lccab, Lcgab, Lcgrb, Mode, ModelConfig, ModelError, ParamStore, TfFormerModel,
};
use crate::tensor::{self, no_grad, BnMode, Tensor};
use crate::train::{total_loss, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

type Result<T> = std::result::Result<T, GradcheckError>;

/// Every block the harness covers, in report order.
pub const BLOCKS: [&str; 10] = [
    "lc_map_luminance",
    "lc_map_chrominance",
    "lcgab",
    "encoder_luminance",
    "encoder_chrominance",
    "lccab",
    "decoder",
    "lcgrb",
    "losses",
    "full_model",
];

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Entries sampled per input tensor and per block's parameter set.
    pub samples: usize,
    /// Spatial extent of the square test image.
    pub size: usize,
    pub config: ModelConfig,
    /// Standard deviation of the noise added to initial weights so that
    /// zero-initialised layers carry gradient.
    pub perturb: f64,
    /// Noise level for the end-to-end check, where the stacked gates amplify
    /// larger weights past what central differences resolve.
    pub full_model_perturb: f64,
    /// Restrict the run to these blocks (all when empty).
    pub only: Vec<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            step: 1e-4,
            tolerance: 1e-4,
            samples: 24,
            size: 8,
            config: ModelConfig::default(),
            perturb: 0.05,
            full_model_perturb: 0.002,
            only: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub block: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub seconds: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.blocks.iter().filter(|b| !b.passed).map(|b| b.block.as_str()).collect()
    }

    /// Tab-separated table without timings, so reruns compare byte for byte.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("block\tmax_rel_error\tchecked\tresult\n");
        for b in &self.blocks {
            let result = if b.passed { "pass" } else { "fail" };
            let _ = writeln!(s, "{}\t{:e}\t{}\t{result}", b.block, b.max_rel_error, b.checked);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<22}{:>15}{:>9}{:>9}  result\n", "block", "max_rel_error", "checked", "seconds");
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{:<22}{:>15.3e}{:>9}{:>9.2}  {}",
                b.block,
                b.max_rel_error,
                b.checked,
                b.seconds,
                if b.passed { "pass" } else { "FAIL" }
            );
        }
        let verdict = if self.passed() {
            "PASS".to_string()
        } else {
            format!("FAIL ({})", self.failing().join(", "))
        };
        let _ = writeln!(s, "gradcheck: {verdict} with tolerance {:e}", self.tolerance);
        s
    }
}

type BlockFn = Box<dyn Fn(&ParamStore, &[Tensor]) -> Result<Tensor>>;

struct Case {
    name: &'static str,
    store: ParamStore,
    inputs: Vec<Tensor>,
    f: BlockFn,
}

fn uniform(rng: &mut Pcg32, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// A fixed random linear functional scaled to stay O(1) in the output size.
fn probe(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = Pcg32::seed_from_u64(seed);
    let scale = 1.0 / (t.numel() as f64).sqrt();
    let w = uniform(&mut rng, t.shape(), -scale, scale);
    Ok(tensor::sum(&tensor::mul(t, &w)?))
}

fn sum_all(parts: Vec<Tensor>) -> Result<Tensor> {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one term");
    for t in it {
        acc = tensor::add(&acc, &t)?;
    }
    Ok(acc)
}

fn build_cases(opts: &GradcheckOptions, wanted: impl Fn(&str) -> bool) -> Result<Vec<Case>> {
    let cfg = opts.config.clone();
    cfg.validate()?;
    let n = opts.size;
    let w = cfg.base_width;
    let mut rng = Pcg32::seed_from_u64(opts.seed);
    let mut cases = Vec::new();
    let fresh = |rng: &mut Pcg32| (ParamStore::new(), Pcg32::seed_from_u64(rng.random()));

    for (name, comp, prefix) in [("lc_map_luminance", 1, "lcmapL"), ("lc_map_chrominance", 3, "lcmapC")] {
        let (mut s, mut r) = fresh(&mut rng);
        let map = LcMap::new(&mut s, &mut r, prefix, comp, w);
        let inputs = vec![uniform(&mut r, &[1, 3, n, n], 0.0, 1.0), uniform(&mut r, &[1, comp, n, n], -0.5, 0.5)];
        if wanted(name) {
            cases.push(Case {
                name,
                store: s,
                inputs,
                f: Box::new(move |s, x| {
                    let (f, b) = map.forward(s, &x[0], &x[1], BnMode::Train)?;
                    sum_all(vec![probe(&f, 1)?, probe(&b, 2)?])
                }),
            });
        }
    }

    let (mut s, mut r) = fresh(&mut rng);
    let block = Lcgab::new(&mut s, &mut r, "lcgab", w, cfg.heads_per_stage[0], cfg.ffn_expansion)?;
    let inputs = vec![uniform(&mut r, &[1, w, n, n], -1.0, 1.0), uniform(&mut r, &[1, w, n, n], -1.0, 1.0)];
    if wanted("lcgab") {
        cases.push(Case {
            name: "lcgab",
            store: s,
            inputs,
            f: Box::new(move |s, x| probe(&block.forward(s, &x[0], &x[1])?, 3)),
        });
    }

    for (name, prefix) in [("encoder_luminance", "encL"), ("encoder_chrominance", "encC")] {
        let (mut s, mut r) = fresh(&mut rng);
        let enc = Encoder::new(&mut s, &mut r, prefix, &cfg)?;
        let inputs = vec![uniform(&mut r, &[1, w, n, n], -1.0, 1.0), uniform(&mut r, &[1, w, n, n], 0.0, 1.0)];
        if wanted(name) {
            cases.push(Case {
                name,
                store: s,
                inputs,
                f: Box::new(move |s, x| {
                    let e = enc.forward(s, &x[0], &x[1])?;
                    let mut parts = vec![probe(&e.bottleneck, 4)?];
                    for (i, skip) in e.skips.iter().enumerate() {
                        parts.push(probe(skip, 5 + i as u64)?);
                    }
                    sum_all(parts)
                }),
            });
        }
    }

    // a 2×2 bottleneck so the attention weights are not trivially one
    let (mut s, mut r) = fresh(&mut rng);
    let bw = cfg.bottleneck_width();
    let fuse = Lccab::new(&mut s, &mut r, "lccab", bw, cfg.bottleneck_heads)?;
    let inputs = vec![uniform(&mut r, &[1, bw, 2, 2], -1.0, 1.0), uniform(&mut r, &[1, bw, 2, 2], -1.0, 1.0)];
    if wanted("lccab") {
        cases.push(Case {
            name: "lccab",
            store: s,
            inputs,
            f: Box::new(move |s, x| probe(&fuse.forward(s, &x[0], &x[1])?, 9)),
        });
    }

    let (mut s, mut r) = fresh(&mut rng);
    let dec = Decoder::new(&mut s, &mut r, "dec", &cfg)?;
    let down = cfg.input_multiple();
    let mut inputs = vec![uniform(&mut r, &[1, bw, n / down, n / down], -1.0, 1.0)];
    for _ in 0..2 {
        for st in 0..cfg.stages {
            let e = n >> st;
            inputs.push(uniform(&mut r, &[1, cfg.stage_width(st), e, e], -1.0, 1.0));
        }
    }
    let stages = cfg.stages;
    if wanted("decoder") {
        cases.push(Case {
            name: "decoder",
            store: s,
            inputs,
            f: Box::new(move |s, x| {
                let out = dec.forward(s, &x[0], &x[1..1 + stages], &x[1 + stages..])?;
                probe(&out, 10)
            }),
        });
    }

    let (mut s, mut r) = fresh(&mut rng);
    let refine = Lcgrb::new(&mut s, &mut r, "lcgrb", &cfg)?;
    let inputs = vec![uniform(&mut r, &[1, 3, n, n], 0.0, 1.0)];
    if wanted("lcgrb") {
        cases.push(Case {
            name: "lcgrb",
            store: s,
            inputs,
            f: Box::new(move |s, x| probe(&refine.forward(s, &x[0])?, 11)),
        });
    }

    let (_, mut r) = fresh(&mut rng);
    let gt = uniform(&mut r, &[1, 3, n, n], 0.0, 1.0);
    let inputs = vec![uniform(&mut r, &[1, 3, n, n], 0.0, 1.0), uniform(&mut r, &[1, 3, n, n], 0.0, 1.0)];
    if wanted("losses") {
        let gt = gt.clone();
        cases.push(Case {
            name: "losses",
            store: ParamStore::new(),
            inputs,
            f: Box::new(move |_, x| Ok(total_loss(&gt, &x[0], &x[1], 0.2)?)),
        });
    }

    if wanted("full_model") {
        let mut model = TfFormerModel::new(cfg.clone(), r.random())?;
        let store = std::mem::take(&mut model.store);
        let inputs = vec![uniform(&mut r, &[1, 3, n, n], 0.0, 0.3)];
        cases.push(Case {
            name: "full_model",
            store,
            inputs,
            f: Box::new(move |s, x| {
                let out = model.trace_with(s, &x[0], Mode::Train)?.outputs;
                Ok(total_loss(&gt, &out.reconstruction, &out.refined, 0.2)?)
            }),
        });
    }
    Ok(cases)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn pick(rng: &mut Pcg32, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, k).into_vec()
    }
}

fn check_case(mut case: Case, opts: &GradcheckOptions, rng: &mut Pcg32) -> Result<BlockReport> {
    let start = Instant::now();
    let noise = if case.name == "full_model" { opts.full_model_perturb } else { opts.perturb };
    case.store.perturb(rng, noise);
    let leaves: Vec<Tensor> = case
        .inputs
        .iter()
        .map(|t| Tensor::leaf(t.shape().to_vec(), t.to_vec()))
        .collect::<std::result::Result<_, _>>()?;
    let loss = (case.f)(&case.store, &leaves)?;
    loss.backward()?;

    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> { no_grad(|| Ok((case.f)(store, inputs)?.item())) };
    let h = opts.step;
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    let detached: Vec<Tensor> = leaves.iter().map(|t| t.detach()).collect();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in pick(rng, leaf.numel(), opts.samples) {
            let at = |delta: f64| -> Result<f64> {
                let mut probe_inputs = detached.clone();
                let mut d = leaf.to_vec();
                d[j] += delta;
                probe_inputs[k] = Tensor::from_vec(leaf.shape().to_vec(), d)?;
                eval(&case.store, &probe_inputs)
            };
            let numeric = (at(h)? - at(-h)?) / (2.0 * h);
            let e = rel_err(analytic[j], numeric);
            if e > opts.tolerance {
                log::warn!("{}: input {k}[{j}] analytic {:e} numeric {numeric:e}", case.name, analytic[j]);
            }
            worst = worst.max(e);
            checked += 1;
        }
    }

    if case.store.parameter_count() > 0 {
        let count = if case.name == "full_model" { opts.samples.max(20) } else { opts.samples };
        let entries: Vec<(usize, usize)> = (0..count).map(|_| random_entry(&case.store, rng)).collect();
        let analytic: Vec<f64> = entries
            .iter()
            .map(|&(p, j)| case.store.params()[p].value.grad().map_or(0.0, |g| g[j]))
            .collect();
        for (&(p, j), a) in entries.iter().zip(analytic) {
            let original = case.store.params()[p].value.to_vec();
            let mut at = |delta: f64| -> Result<f64> {
                let mut d = original.clone();
                d[j] += delta;
                case.store.params_mut()[p].set_data(d);
                eval(&case.store, &detached)
            };
            let numeric = (at(h)? - at(-h)?) / (2.0 * h);
            case.store.params_mut()[p].set_data(original);
            let e = rel_err(a, numeric);
            if e > opts.tolerance {
                log::warn!(
                    "{}: parameter {}[{j}] analytic {a:e} numeric {numeric:e}",
                    case.name,
                    case.store.params()[p].name
                );
            }
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok(BlockReport {
        block: case.name.to_string(),
        max_rel_error: worst,
        checked,
        seconds: start.elapsed().as_secs_f64(),
        passed: worst < opts.tolerance,
    })
}

/// Runs the selected block checks in [`BLOCKS`] order.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    for name in &opts.only {
        if !BLOCKS.contains(&name.as_str()) {
            return Err(ModelError::Config {
                field: "block".into(),
                msg: format!("unknown block {name:?}; expected one of {}", BLOCKS.join(", ")),
            }
            .into());
        }
    }
    let wanted = |name: &str| opts.only.is_empty() || opts.only.iter().any(|o| o == name);
    let mut rng = Pcg32::seed_from_u64(opts.seed ^ 0x5EED);
    let mut blocks = Vec::new();
    for case in build_cases(opts, wanted)? {
        blocks.push(check_case(case, opts, &mut rng)?);
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        blocks,
    })
}
