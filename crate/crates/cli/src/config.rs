//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use tfformer::data::{CurationConfig, Filter};
use tfformer::model::{ModelConfig, CONFIG_KEYS};
use tfformer::train::{TrainConfig, TRAIN_KEYS};

use crate::CliError;

/// Name of the resolved-config echo written into the output directory.
pub const ECHO_FILE: &str = "run_config.txt";

const RUN_KEYS: [&str; 13] = [
    "seed",
    "out",
    "corpus",
    "train_dir",
    "val_dir",
    "checkpoint",
    "curate_patch",
    "curate_stride",
    "brightness_threshold",
    "confidence_threshold",
    "filter_order",
    "synthetic_pairs",
    "synthetic_size",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Raw corpus with `low/` and `ref/` directories.
    pub corpus: Option<PathBuf>,
    /// Paired training images, typically the `patches/` output of `curate`.
    pub train_dir: Option<PathBuf>,
    /// Paired validation images; the training pairs are reused when unset.
    pub val_dir: Option<PathBuf>,
    /// Weights for `enhance` and `eval`; defaults to `<out>/checkpoint.tff`.
    pub checkpoint: Option<PathBuf>,
    pub curate: CurationConfig,
    pub synthetic_pairs: usize,
    pub synthetic_size: usize,
    pub model: ModelConfig,
    /// `train.seed` always mirrors `seed`.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = TrainConfig::default().seed;
        RunConfig {
            seed,
            out: PathBuf::from("out"),
            corpus: None,
            train_dir: None,
            val_dir: None,
            checkpoint: None,
            curate: CurationConfig::default(),
            synthetic_pairs: 1,
            synthetic_size: 32,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn config_err(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str, allowed: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| config_err(key, format!("cannot parse {v:?}; allowed: {allowed}")))
}

fn path_value(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn threshold(key: &str, v: &str) -> Result<Option<f64>, CliError> {
    if v == "off" {
        return Ok(None);
    }
    let t: f64 = parse(key, v, "real ≥ 0 or `off`")?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(config_err(key, "allowed: real ≥ 0 or `off`"));
    }
    Ok(Some(t))
}

fn show_threshold(t: Option<f64>) -> String {
    t.map_or("off".into(), |t| t.to_string())
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    /// Every recognised key, in echo order.
    pub fn keys() -> Vec<&'static str> {
        let train = TRAIN_KEYS.iter().filter(|k| **k != "seed");
        RUN_KEYS.iter().chain(CONFIG_KEYS.iter()).chain(train).copied().collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "seed" => {
                self.seed = parse(key, v, "integer ≥ 0")?;
                self.train.seed = self.seed;
            }
            "out" => {
                self.out = path_value(v).ok_or_else(|| config_err(key, "allowed: a non-empty path"))?;
            }
            "corpus" => self.corpus = path_value(v),
            "train_dir" => self.train_dir = path_value(v),
            "val_dir" => self.val_dir = path_value(v),
            "checkpoint" => self.checkpoint = path_value(v),
            "curate_patch" => self.curate.patch_size = parse(key, v, "integer ≥ 1")?,
            "curate_stride" => self.curate.stride = parse(key, v, "integer ≥ 1")?,
            "brightness_threshold" => self.curate.brightness_threshold = threshold(key, v)?,
            "confidence_threshold" => self.curate.confidence_threshold = threshold(key, v)?,
            "filter_order" => {
                self.curate.order = v
                    .split(',')
                    .map(|f| match f.trim() {
                        "brightness" => Ok(Filter::Brightness),
                        "confidence" => Ok(Filter::Confidence),
                        other => Err(config_err(key, format!("unknown filter {other:?}; allowed: brightness, confidence"))),
                    })
                    .collect::<Result<_, _>>()?;
            }
            "synthetic_pairs" => self.synthetic_pairs = parse(key, v, "integer ≥ 1")?,
            "synthetic_size" => self.synthetic_size = parse(key, v, "integer ≥ 1")?,
            k if CONFIG_KEYS.contains(&k) => self.model.set(k, v)?,
            k if TRAIN_KEYS.contains(&k) => self.train.set(k, v)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies command-line overrides in order, logging each one.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<(), CliError> {
        for (k, v) in overrides {
            let before = self.value_of(k);
            self.set(k, v)?;
            log::info!("override {k}: {} -> {}", before.unwrap_or_default(), self.value_of(k).unwrap_or_default());
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> Option<String> {
        self.to_text()
            .lines()
            .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim().to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.curate.patch_size == 0 {
            return Err(config_err("curate_patch", "allowed: integer ≥ 1"));
        }
        if self.curate.stride == 0 {
            return Err(config_err("curate_stride", "allowed: integer ≥ 1"));
        }
        if self.synthetic_pairs == 0 {
            return Err(config_err("synthetic_pairs", "allowed: integer ≥ 1"));
        }
        if self.synthetic_size < self.train.patch {
            return Err(config_err("synthetic_size", format!("allowed: integer ≥ patch ({})", self.train.patch)));
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// The fully resolved configuration, one `key = value` line per key.
    pub fn to_text(&self) -> String {
        let order: Vec<&str> = self
            .curate
            .order
            .iter()
            .map(|f| match f {
                Filter::Brightness => "brightness",
                Filter::Confidence => "confidence",
            })
            .collect();
        let run = [
            self.seed.to_string(),
            self.out.display().to_string(),
            show_path(&self.corpus),
            show_path(&self.train_dir),
            show_path(&self.val_dir),
            show_path(&self.checkpoint),
            self.curate.patch_size.to_string(),
            self.curate.stride.to_string(),
            show_threshold(self.curate.brightness_threshold),
            show_threshold(self.curate.confidence_threshold),
            order.join(","),
            self.synthetic_pairs.to_string(),
            self.synthetic_size.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in RUN_KEYS.iter().zip(run) {
            let _ = writeln!(s, "{k} = {v}");
            if v.is_empty() {
                s.truncate(s.len() - 2);
                s.push('\n');
            }
        }
        s.push_str(&self.model.to_text());
        for line in self.train.to_text().lines().filter(|l| !l.starts_with("seed ")) {
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    /// Writes the resolved config, headed by the subcommand, into `out`.
    pub fn echo(&self, command: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(ECHO_FILE);
        std::fs::write(&path, format!("# command = {command}\n{}", self.to_text()))?;
        log::info!("resolved config for `{command}` (seed {}) written to {}", self.seed, path.display());
        Ok(path)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join(tfformer::train::CHECKPOINT_FILE))
    }
}
