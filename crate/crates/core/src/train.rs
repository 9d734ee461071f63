//! Losses, the Adam optimizer, the plateau scheduler and the training loop.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::color::{decompose_tensor, RgbImage};
use crate::data::{synth_degrade, synthetic_scene, DataError, DegradeParams};
use crate::metrics::psnr;
use crate::model::{save_checkpoint, Mode, ModelError, TfFormerModel};
use crate::tensor::{self, no_grad, Parameter, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid training config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("training state: {0}")]
    State(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TrainError>;

fn pixel_count(x: &Tensor) -> Result<usize> {
    match *x.shape() {
        [3, h, w] => Ok(h * w),
        [n, 3, h, w] => Ok(n * h * w),
        _ => Err(tensor::invalid("loss", format!("expected RGB tensor, got {:?}", x.shape())).into()),
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op: "loss",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Per-pixel L1 distance between the luminance and chrominance components,
/// `(Σ|ΔL| + Σ|ΔC|) / pixels`.
pub fn lcc_distance(gt: &Tensor, pred: &Tensor) -> Result<Tensor> {
    same_shape(gt, pred)?;
    let n = pixel_count(gt)?;
    let (a, b) = (decompose_tensor(gt)?, decompose_tensor(pred)?);
    let dl = tensor::sum(&tensor::abs(&tensor::sub(&a.luminance, &b.luminance)?));
    let dc = tensor::sum(&tensor::abs(&tensor::sub(&a.chrominance, &b.chrominance)?));
    Ok(tensor::scale(&tensor::add(&dl, &dc)?, 1.0 / n as f64))
}

/// Mean absolute difference over all samples.
pub fn l1(gt: &Tensor, pred: &Tensor) -> Result<Tensor> {
    same_shape(gt, pred)?;
    pixel_count(gt)?;
    Ok(tensor::mean(&tensor::abs(&tensor::sub(gt, pred)?)))
}

/// `λ · (L1(rec) + L1(ref) + D(rec) + D(ref))`.
pub fn total_loss(gt: &Tensor, rec: &Tensor, refined: &Tensor, lambda: f64) -> Result<Tensor> {
    let terms = [l1(gt, rec)?, l1(gt, refined)?, lcc_distance(gt, rec)?, lcc_distance(gt, refined)?];
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = tensor::add(&acc, t)?;
    }
    Ok(tensor::scale(&acc, lambda))
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Parameter], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update from the gradients held by `params`; missing gradients
    /// count as zero. Gradients are cleared afterwards. Nothing is updated
    /// if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Parameter], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(TrainError::State(format!(
                "optimizer tracks {} parameters, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|p| p.value.grad()).collect();
        for (p, g) in params.iter().zip(&grads) {
            if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.unwrap_or_else(|| vec![0.0; p.numel()]);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut data = p.value.to_vec();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            p.set_data(data);
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a maximised metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub threshold: f64,
    pub best: Option<f64>,
    pub bad: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        Plateau {
            factor,
            patience,
            min_lr,
            threshold: 1e-4,
            best: None,
            bad: 0,
        }
    }

    /// Records one metric value and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        match self.best {
            Some(b) if metric < b + self.threshold => self.bad += 1,
            _ => {
                self.best = Some(metric);
                self.bad = 0;
            }
        }
        if self.bad >= self.patience {
            self.bad = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub patch: usize,
    pub lr: f64,
    pub lambda_r: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub val_interval: u64,
    pub checkpoint_interval: u64,
    pub scheduler_start: u64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            steps: 2000,
            batch_size: 4,
            patch: 32,
            lr: 1e-4,
            lambda_r: 0.2,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            val_interval: 100,
            checkpoint_interval: 500,
            scheduler_start: 800,
            plateau_factor: 0.5,
            plateau_patience: 5,
            min_lr: 1e-6,
        }
    }
}

pub const TRAIN_KEYS: [&str; 15] = [
    "seed",
    "steps",
    "batch_size",
    "patch",
    "lr",
    "lambda_r",
    "beta1",
    "beta2",
    "adam_eps",
    "val_interval",
    "checkpoint_interval",
    "scheduler_start",
    "plateau_factor",
    "plateau_patience",
    "min_lr",
];

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str, range: &str) -> Result<T> {
            v.trim().parse().map_err(|_| TrainError::Config {
                field: key.into(),
                msg: format!("cannot parse {v:?}; allowed: {range}"),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value, "integer ≥ 0")?,
            "steps" => self.steps = parse(key, value, "integer ≥ 0")?,
            "batch_size" => self.batch_size = parse(key, value, "integer ≥ 1")?,
            "patch" => self.patch = parse(key, value, "integer ≥ 1")?,
            "lr" => self.lr = parse(key, value, "real > 0")?,
            "lambda_r" => self.lambda_r = parse(key, value, "real > 0")?,
            "beta1" => self.beta1 = parse(key, value, "real in [0, 1)")?,
            "beta2" => self.beta2 = parse(key, value, "real in [0, 1)")?,
            "adam_eps" => self.adam_eps = parse(key, value, "real > 0")?,
            "val_interval" => self.val_interval = parse(key, value, "integer ≥ 1")?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value, "integer ≥ 1")?,
            "scheduler_start" => self.scheduler_start = parse(key, value, "integer ≥ 0")?,
            "plateau_factor" => self.plateau_factor = parse(key, value, "real in (0, 1)")?,
            "plateau_patience" => self.plateau_patience = parse(key, value, "integer ≥ 1")?,
            "min_lr" => self.min_lr = parse(key, value, "real ≥ 0")?,
            _ => {
                return Err(TrainError::Config {
                    field: key.into(),
                    msg: "unknown training key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, range: &str| {
            if ok {
                Ok(())
            } else {
                Err(TrainError::Config {
                    field: field.into(),
                    msg: format!("allowed: {range}"),
                })
            }
        };
        check(self.batch_size >= 1, "batch_size", "integer ≥ 1")?;
        check(self.patch >= 1, "patch", "integer ≥ 1")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "real > 0")?;
        check(self.lambda_r > 0.0 && self.lambda_r.is_finite(), "lambda_r", "real > 0")?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "real in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "real in [0, 1)")?;
        check(self.adam_eps > 0.0, "adam_eps", "real > 0")?;
        check(self.val_interval >= 1, "val_interval", "integer ≥ 1")?;
        check(self.checkpoint_interval >= 1, "checkpoint_interval", "integer ≥ 1")?;
        check(
            self.plateau_factor > 0.0 && self.plateau_factor < 1.0,
            "plateau_factor",
            "real in (0, 1)",
        )?;
        check(self.plateau_patience >= 1, "plateau_patience", "integer ≥ 1")?;
        check(self.min_lr >= 0.0 && self.min_lr <= self.lr, "min_lr", "real in [0, lr]")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let vals = [
            self.seed.to_string(),
            self.steps.to_string(),
            self.batch_size.to_string(),
            self.patch.to_string(),
            self.lr.to_string(),
            self.lambda_r.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.adam_eps.to_string(),
            self.val_interval.to_string(),
            self.checkpoint_interval.to_string(),
            self.scheduler_start.to_string(),
            self.plateau_factor.to_string(),
            self.plateau_patience.to_string(),
            self.min_lr.to_string(),
        ];
        for (k, v) in TRAIN_KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Aligned low-light / reference images to draw training patches from.
#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub pairs: Vec<(RgbImage, RgbImage)>,
}

impl PairSet {
    /// `count` synthetic scenes of `size × size`, each darkened with freshly
    /// sampled degradation parameters.
    pub fn synthetic(count: usize, size: usize, seed: u64) -> Result<Self> {
        let mut rng = Pcg32::seed_from_u64(seed);
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let clean = synthetic_scene(size, size, rng.random());
            let low = synth_degrade(&clean, &DegradeParams::sample(&mut rng))?;
            pairs.push((low, clean));
        }
        Ok(PairSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The `k`-th training sample of the run: epochs visit every pair once
    /// in a seed-determined order, and the crop origin depends only on
    /// `(seed, k)`.
    pub fn sample(&self, seed: u64, k: u64, patch: usize) -> Result<(RgbImage, RgbImage)> {
        let n = self.pairs.len() as u64;
        if n == 0 {
            return Err(TrainError::State("empty training set".into()));
        }
        let epoch = k / n;
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut Pcg32::seed_from_u64(seed ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03)));
        let (low, reference) = &self.pairs[order[(k % n) as usize]];
        let (h, w) = (low.height(), low.width());
        if patch > h || patch > w {
            return Err(TrainError::Config {
                field: "patch".into(),
                msg: format!("{patch} exceeds training image {h}x{w}"),
            });
        }
        let mut rng = Pcg32::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (r, c) = (rng.random_range(0..=h - patch), rng.random_range(0..=w - patch));
        let crop = |img: &RgbImage| img.crop(r, c, patch, patch).expect("window inside image");
        Ok((crop(low), crop(reference)))
    }

    /// Stacked `[B, 3, patch, patch]` low and reference batches for `step`.
    pub fn batch(&self, seed: u64, step: u64, batch: usize, patch: usize) -> Result<(Tensor, Tensor)> {
        let mut lows = Vec::with_capacity(batch);
        let mut refs = Vec::with_capacity(batch);
        for b in 0..batch as u64 {
            let (l, r) = self.sample(seed, step * batch as u64 + b, patch)?;
            lows.push(l);
            refs.push(r);
        }
        Ok((RgbImage::stack(&lows)?, RgbImage::stack(&refs)?))
    }
}

/// Optimizer, schedule and bookkeeping that a resumed run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub lr: f64,
    pub adam: Adam,
    pub plateau: Plateau,
    /// Sum and count of training losses since the last validation.
    pub loss_sum: f64,
    pub loss_count: u64,
}

pub const STATE_MAGIC: &[u8; 4] = b"TFS1";

impl TrainState {
    pub fn new(model: &TfFormerModel, cfg: &TrainConfig) -> Self {
        TrainState {
            step: 0,
            lr: cfg.lr,
            adam: Adam::new(model.store.params(), cfg.beta1, cfg.beta2, cfg.adam_eps),
            plateau: Plateau::new(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr),
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = STATE_MAGIC.to_vec();
        let u = |b: &mut Vec<u8>, v: u64| b.extend(v.to_le_bytes());
        let f = |b: &mut Vec<u8>, v: f64| b.extend(v.to_le_bytes());
        u(&mut b, self.step);
        f(&mut b, self.lr);
        for v in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            f(&mut b, v);
        }
        u(&mut b, self.adam.t);
        u(&mut b, self.adam.m.len() as u64);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            u(&mut b, m.len() as u64);
            m.iter().chain(v).for_each(|&x| f(&mut b, x));
        }
        let p = &self.plateau;
        for v in [p.factor, p.min_lr, p.threshold, p.best.unwrap_or(f64::NAN)] {
            f(&mut b, v);
        }
        u(&mut b, p.patience as u64);
        u(&mut b, p.bad as u64);
        f(&mut b, self.loss_sum);
        u(&mut b, self.loss_count);
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        struct Cursor<'a>(&'a [u8]);
        impl Cursor<'_> {
            fn take8(&mut self) -> Result<[u8; 8]> {
                if self.0.len() < 8 {
                    return Err(TrainError::State("truncated state file".into()));
                }
                let (head, rest) = self.0.split_at(8);
                self.0 = rest;
                Ok(head.try_into().expect("8 bytes"))
            }
            fn u(&mut self) -> Result<u64> {
                self.take8().map(u64::from_le_bytes)
            }
            fn f(&mut self) -> Result<f64> {
                self.take8().map(f64::from_le_bytes)
            }
        }
        let Some(rest) = buf.strip_prefix(STATE_MAGIC) else {
            return Err(TrainError::State("not a training state file".into()));
        };
        let mut c = Cursor(rest);
        let step = c.u()?;
        let lr = c.f()?;
        let (beta1, beta2, eps) = (c.f()?, c.f()?, c.f()?);
        let t = c.u()?;
        let count = c.u()? as usize;
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let n = c.u()? as usize;
            if n > c.0.len() / 16 {
                return Err(TrainError::State("truncated state file".into()));
            }
            m.push((0..n).map(|_| c.f()).collect::<Result<Vec<_>>>()?);
            v.push((0..n).map(|_| c.f()).collect::<Result<Vec<_>>>()?);
        }
        let (factor, min_lr, threshold, best) = (c.f()?, c.f()?, c.f()?, c.f()?);
        let (patience, bad) = (c.u()? as usize, c.u()? as usize);
        let (loss_sum, loss_count) = (c.f()?, c.u()?);
        if !c.0.is_empty() {
            return Err(TrainError::State("trailing bytes in state file".into()));
        }
        Ok(TrainState {
            step,
            lr,
            adam: Adam { beta1, beta2, eps, t, m, v },
            plateau: Plateau {
                factor,
                patience,
                min_lr,
                threshold,
                best: (!best.is_nan()).then_some(best),
                bad,
            },
            loss_sum,
            loss_count,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// One validation record of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!("{}\t{:e}\t{:.9}\t{:.6}", self.step, self.lr, self.train_loss, self.val_psnr)
    }
}

pub const LOG_HEADER: &str = "step\tlr\ttrain_loss\tval_psnr";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Loss of every step run by this call, in order.
    pub losses: Vec<f64>,
    pub log: Vec<LogRecord>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.tff";
pub const STATE_FILE: &str = "state.tfs";
pub const METRIC_LOG_FILE: &str = "metrics.tsv";

/// Mean PSNR (peak 1) of the refined output over the validation pairs.
pub fn validate(model: &TfFormerModel, val: &PairSet) -> Result<f64> {
    let mut total = 0.0;
    for (low, reference) in &val.pairs {
        let (_, refined) = model.enhance(low)?;
        total += psnr(&refined, reference, 1.0).map_err(|e| TrainError::State(e.to_string()))?;
    }
    Ok(total / val.len().max(1) as f64)
}

/// One optimisation step; returns the loss before the update.
pub fn train_step(model: &mut TfFormerModel, low: &Tensor, reference: &Tensor, lambda: f64, state: &mut TrainState) -> Result<f64> {
    let out = model.forward(low, Mode::Train)?;
    let loss = total_loss(reference, &out.reconstruction, &out.refined, lambda)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(TrainError::State(format!("non-finite loss {value} at step {}", state.step)));
    }
    loss.backward()?;
    state.adam.step(model.store.params_mut(), state.lr)?;
    state.step += 1;
    Ok(value)
}

/// Where a run writes its checkpoint, optimizer state and metric log.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    pub fn state(&self) -> PathBuf {
        self.dir.join(STATE_FILE)
    }

    pub fn metric_log(&self) -> PathBuf {
        self.dir.join(METRIC_LOG_FILE)
    }

    pub fn save(&self, model: &TfFormerModel, state: &TrainState) -> Result<()> {
        save_checkpoint(model, self.checkpoint())?;
        state.save(self.state())
    }

    fn append_log(&self, rec: &LogRecord) -> Result<()> {
        let path = self.metric_log();
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{LOG_HEADER}")?;
        }
        writeln!(f, "{}", rec.to_line())?;
        Ok(())
    }
}

/// Runs steps `state.step .. cfg.steps`, validating every `val_interval`
/// steps and saving every `checkpoint_interval` steps and at the end when
/// `files` is given.
pub fn train(
    model: &mut TfFormerModel,
    data: &PairSet,
    val: &PairSet,
    cfg: &TrainConfig,
    state: &mut TrainState,
    files: Option<&RunFiles>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::State("empty training set".into()));
    }
    let mut report = TrainReport::default();
    while state.step < cfg.steps {
        let (low, reference) = data.batch(cfg.seed, state.step, cfg.batch_size, cfg.patch)?;
        let loss = train_step(model, &low, &reference, cfg.lambda_r, state)?;
        report.losses.push(loss);
        state.loss_sum += loss;
        state.loss_count += 1;
        log::debug!("step {} loss {loss:.6}", state.step);

        if state.step.is_multiple_of(cfg.val_interval) {
            let val_psnr = if val.is_empty() { f64::NAN } else { no_grad(|| validate(model, val))? };
            let rec = LogRecord {
                step: state.step,
                lr: state.lr,
                train_loss: state.loss_sum / state.loss_count as f64,
                val_psnr,
            };
            log::info!("{}", rec.to_line());
            if let Some(f) = files {
                f.append_log(&rec)?;
            }
            report.log.push(rec);
            state.loss_sum = 0.0;
            state.loss_count = 0;
            if state.step >= cfg.scheduler_start && val_psnr.is_finite() {
                state.lr = state.plateau.step(val_psnr, state.lr);
            }
        }
        if let Some(f) = files {
            if state.step.is_multiple_of(cfg.checkpoint_interval) || state.step == cfg.steps {
                f.save(model, state)?;
            }
        }
    }
    if let Some(f) = files {
        if report.losses.is_empty() {
            f.save(model, state)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_waits_for_patience() {
        let mut p = Plateau::new(0.5, 2, 1e-6);
        assert_eq!(p.step(10.0, 1.0), 1.0);
        assert_eq!(p.step(10.0, 1.0), 1.0);
        assert_eq!(p.step(10.00005, 1.0), 0.5);
        assert_eq!(p.bad, 0);
        assert_eq!(p.best, Some(10.0));
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = TrainConfig {
            lr: 3.5e-4,
            steps: 12,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
