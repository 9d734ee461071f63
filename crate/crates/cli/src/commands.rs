//! Subcommand bodies. Each takes a resolved [`RunConfig`] and writes its
//! primary outputs under `cfg.out`.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tfformer::color::RgbImage;
use tfformer::data::{curate_corpus, is_image_path, list_pairs, load_image, save_image, HeuristicScorer};
use tfformer::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use tfformer::metrics::{psnr, ssim, ResultsTable};
use tfformer::model::{load_checkpoint, TfFormerModel};
use tfformer::tensor::fault::{self, FaultOp};
use tfformer::train::{self, PairSet, RunFiles, TrainState};

use crate::{CliError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const PATCH_DIR: &str = "patches";
pub const LOSS_LOG_FILE: &str = "losses.tsv";
pub const RESULTS_FILE: &str = "results.tsv";
pub const GRADCHECK_FILE: &str = "gradcheck.tsv";
pub const REC_DIR: &str = "rec";

#[derive(Clone, Debug, PartialEq)]
pub struct CurateSummary {
    pub extracted: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: Vec<(String, String)>,
}

impl fmt::Display for CurateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "extracted {} accepted {} rejected {} skipped {}",
            self.extracted,
            self.accepted,
            self.rejected,
            self.skipped.len()
        )
    }
}

fn is_empty_dir(p: &Path) -> bool {
    p.read_dir().map(|mut d| d.next().is_none()).unwrap_or(false)
}

/// Extract, filter and record every pair; writes `manifest.tsv` and the
/// accepted pairs under `patches/low` and `patches/ref`.
pub fn curate(cfg: &RunConfig) -> Result<CurateSummary, CliError> {
    let corpus = cfg
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Usage("curate needs a corpus directory (argument or `corpus` key)".into()))?;
    let scorer = HeuristicScorer::default();
    let result = if is_empty_dir(corpus) {
        log::warn!("{}: empty corpus", corpus.display());
        Default::default()
    } else {
        curate_corpus(corpus, &cfg.curate, &scorer)?
    };
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join(MANIFEST_FILE), result.manifest())?;
    let patches = cfg.out.join(PATCH_DIR);
    if patches.exists() {
        std::fs::remove_dir_all(&patches)?;
    }
    result.write_patches(&patches)?;
    Ok(CurateSummary {
        extracted: result.extracted(),
        accepted: result.accepted_count(),
        rejected: result.rejected_count(),
        skipped: result.skipped,
    })
}

/// Loads every complete pair of a `low/` + `ref/` directory in sorted order,
/// skipping and logging pairs that cannot be used.
pub fn load_pair_dir(dir: &Path) -> Result<PairSet, CliError> {
    let mut set = PairSet::default();
    for (id, low, reference) in list_pairs(dir)? {
        let (Some(low), Some(reference)) = (low, reference) else {
            log::warn!("{id}: missing partner, skipped");
            continue;
        };
        match load_image(&low).and_then(|l| Ok((l, load_image(&reference)?))) {
            Ok((l, r)) if l.height() == r.height() && l.width() == r.width() => set.pairs.push((l, r)),
            Ok(_) => log::warn!("{id}: low and reference differ in size, skipped"),
            Err(e) => log::warn!("{id}: {e}, skipped"),
        }
    }
    if set.is_empty() {
        return Err(CliError::Data(format!("{}: no usable image pairs", dir.display())));
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    /// Global step before and after this run.
    pub from_step: u64,
    pub to_step: u64,
    pub losses: Vec<f64>,
    /// Mean PSNR of the refined output over the validation pairs at the end.
    pub final_psnr: f64,
    pub checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn first_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "steps {}..{}", self.from_step, self.to_step)?;
        if let (Some(a), Some(b)) = (self.first_loss(), self.last_loss()) {
            write!(f, " loss {a:.6} -> {b:.6}")?;
        }
        write!(f, " val_psnr {:.3} dB checkpoint {}", self.final_psnr, self.checkpoint.display())
    }
}

fn append_losses(path: &Path, first_step: u64, losses: &[f64]) -> Result<(), CliError> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "step\tloss")?;
    }
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{}\t{l}", first_step + i as u64 + 1)?;
    }
    Ok(())
}

/// Trains up to `cfg.train.steps`; writes `checkpoint.tff`, `state.tfs`,
/// `metrics.tsv` and a per-step `losses.tsv`.
pub fn train(cfg: &RunConfig, synthetic: bool, resume: bool) -> Result<TrainSummary, CliError> {
    let data = if synthetic {
        PairSet::synthetic(cfg.synthetic_pairs, cfg.synthetic_size, cfg.seed)?
    } else {
        let dir = cfg
            .train_dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("train needs `--synthetic` or a training directory (`--data` / `train_dir`)".into()))?;
        load_pair_dir(dir)?
    };
    let val = match &cfg.val_dir {
        Some(dir) => load_pair_dir(dir)?,
        None => data.clone(),
    };

    let files = RunFiles { dir: cfg.out.clone() };
    std::fs::create_dir_all(&files.dir)?;
    let mut model = TfFormerModel::new(cfg.model.clone(), cfg.seed)?;
    let mut state = if resume {
        if !files.checkpoint().exists() || !files.state().exists() {
            return Err(CliError::Data(format!("--resume: no checkpoint and state in {}", files.dir.display())));
        }
        model.load_weights(files.checkpoint())?;
        let state = TrainState::load(files.state())?;
        log::info!("resuming at step {}", state.step);
        state
    } else {
        for p in [files.metric_log(), files.dir.join(LOSS_LOG_FILE)] {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        TrainState::new(&model, &cfg.train)
    };

    let from_step = state.step;
    let report = train::train(&mut model, &data, &val, &cfg.train, &mut state, Some(&files))?;
    append_losses(&files.dir.join(LOSS_LOG_FILE), from_step, &report.losses)?;
    let final_psnr = train::validate(&model, &val)?;
    Ok(TrainSummary {
        from_step,
        to_step: state.step,
        losses: report.losses,
        final_psnr,
        checkpoint: files.checkpoint(),
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnhanceSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

impl fmt::Display for EnhanceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "enhanced {} failed {}", self.written.len(), self.failed.len())?;
        for (p, e) in &self.failed {
            write!(f, "\n  {}: {e}", p.display())?;
        }
        Ok(())
    }
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::Data(format!("{}: no such file or directory", input.display())));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input)? {
        let p = entry?.path();
        if p.is_file() && is_image_path(&p) {
            files.push(p);
        } else {
            log::debug!("{}: not an image, ignored", p.display());
        }
    }
    files.sort();
    Ok(files)
}

fn load_model(cfg: &RunConfig) -> Result<TfFormerModel, CliError> {
    let path = cfg.checkpoint_path();
    let model = load_checkpoint(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let diff = cfg.model.diff(&model.config);
    if !diff.is_empty() {
        log::info!("using the architecture stored in {} ({})", path.display(), diff.join("; "));
    }
    Ok(model)
}

/// Enhances each input at its native size and writes the refined output to
/// `out/<file name>`, plus the reconstruction to `out/rec/<file name>` with
/// `with_rec`. Per-file failures are logged and collected.
pub fn enhance(cfg: &RunConfig, input: &Path, with_rec: bool) -> Result<EnhanceSummary, CliError> {
    let model = load_model(cfg)?;
    let inputs = image_inputs(input)?;
    std::fs::create_dir_all(&cfg.out)?;
    if with_rec {
        std::fs::create_dir_all(cfg.out.join(REC_DIR))?;
    }
    let mut summary = EnhanceSummary::default();
    for path in inputs {
        let name = path.file_name().expect("listed files have names").to_owned();
        let done = load_image(&path).map_err(CliError::from).and_then(|img| {
            let (rec, refined) = model.enhance(&img)?;
            let target = cfg.out.join(&name);
            save_image(&refined, &target)?;
            if with_rec {
                save_image(&rec, cfg.out.join(REC_DIR).join(&name))?;
            }
            Ok(target)
        });
        match done {
            Ok(target) => summary.written.push(target),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                summary.failed.push((path, e.to_string()));
            }
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub table: ResultsTable,
    /// Ids present on only one side.
    pub unmatched: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pairs {} unmatched {} failed {}", self.table.rows.len(), self.unmatched.len(), self.failed.len())?;
        for id in &self.unmatched {
            write!(f, "\n  unmatched: {id}")?;
        }
        for (id, e) in &self.failed {
            write!(f, "\n  {id}: {e}")?;
        }
        Ok(())
    }
}

fn score(model: Option<&TfFormerModel>, low: &Path, reference: &Path) -> Result<(f64, f64), CliError> {
    let reference = load_image(reference)?;
    let prediction: RgbImage = match model {
        Some(m) => m.enhance(&load_image(low)?)?.1,
        None => reference.clone(),
    };
    Ok((psnr(&prediction, &reference, 1.0)?, ssim(&prediction, &reference)?))
}

/// Scores the refined output of every pair against its reference and writes
/// `results.tsv`. With `identity`, each reference is scored against itself.
pub fn eval(cfg: &RunConfig, dir: &Path, identity: bool) -> Result<EvalSummary, CliError> {
    let model = if identity { None } else { Some(load_model(cfg)?) };
    let mut summary = EvalSummary::default();
    for (id, low, reference) in list_pairs(dir)? {
        let (Some(low), Some(reference)) = (low, reference) else {
            log::warn!("{id}: unmatched pair");
            summary.unmatched.push(id);
            continue;
        };
        match score(model.as_ref(), &low, &reference) {
            Ok((p, s)) => summary.table.push(id, p, s),
            Err(e) => {
                log::error!("{id}: {e}");
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join(RESULTS_FILE), summary.table.to_tsv())?;
    Ok(summary)
}

/// Runs the finite-difference suite with the run's seed and architecture and
/// writes `gradcheck.tsv`. `fault` corrupts one backward rule for the run.
pub fn gradcheck(cfg: &RunConfig, only: &[String], fault: Option<FaultOp>) -> Result<GradcheckReport, CliError> {
    let opts = GradcheckOptions {
        seed: cfg.seed,
        config: cfg.model.clone(),
        only: only.to_vec(),
        ..Default::default()
    };
    if let Some(op) = fault {
        log::warn!("injecting a gradient fault into {op:?}");
    }
    fault::arm(fault);
    let report = run_gradcheck(&opts);
    fault::arm(None);
    let report = report?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join(GRADCHECK_FILE), report.to_tsv())?;
    Ok(report)
}
