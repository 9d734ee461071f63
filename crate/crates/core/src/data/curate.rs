use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    brightness_filter, confidence_filter, extract_patches, is_image_path, load_image, save_image, ConfidenceScorer,
    DataError, PairRecord, DEFAULT_BRIGHTNESS_THRESHOLD, DEFAULT_CONFIDENCE_THRESHOLD,
};

pub const MANIFEST_HEADER: &str =
    "source_id\trow\tcol\tbrightness\tbrightness_pass\tconfidence\tconfidence_pass\taccepted";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Filter {
    Brightness,
    Confidence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurationConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// `None` disables the filter.
    pub brightness_threshold: Option<f64>,
    pub confidence_threshold: Option<f64>,
    /// Order in which enabled filters run; the accepted set does not depend on it.
    pub order: Vec<Filter>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            patch_size: 512,
            stride: 512,
            brightness_threshold: Some(DEFAULT_BRIGHTNESS_THRESHOLD),
            confidence_threshold: Some(DEFAULT_CONFIDENCE_THRESHOLD),
            order: vec![Filter::Brightness, Filter::Confidence],
        }
    }
}

pub fn apply_filter(
    rec: &mut PairRecord,
    filter: Filter,
    cfg: &CurationConfig,
    scorer: &dyn ConfidenceScorer,
) -> Result<(), DataError> {
    let verdict = match (filter, cfg.brightness_threshold, cfg.confidence_threshold) {
        (Filter::Brightness, Some(t), _) => brightness_filter(&rec.reference, t),
        (Filter::Confidence, _, Some(t)) => confidence_filter(&rec.id, &rec.reference, scorer, t)?,
        _ => return Ok(()),
    };
    rec.verdicts.push(verdict);
    Ok(())
}

/// One line of the curation manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub source_id: String,
    pub origin: (usize, usize),
    pub brightness: Option<(f64, bool)>,
    pub confidence: Option<(f64, bool)>,
    pub accepted: bool,
}

impl ManifestRow {
    fn from_record(rec: &PairRecord) -> Self {
        let find = |name: &str| {
            rec.verdicts
                .iter()
                .find(|v| v.filter == name)
                .map(|v| (v.statistic, v.passed))
        };
        ManifestRow {
            source_id: rec.id.clone(),
            origin: rec.origin.unwrap_or((0, 0)),
            brightness: find("brightness"),
            confidence: find("confidence"),
            accepted: rec.accepted(),
        }
    }

    pub fn to_line(&self) -> String {
        let cell = |v: Option<(f64, bool)>| match v {
            Some((s, p)) => format!("{s:.6}\t{}", if p { "pass" } else { "fail" }),
            None => "-\t-".into(),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.source_id,
            self.origin.0,
            self.origin.1,
            cell(self.brightness),
            cell(self.confidence),
            if self.accepted { "accept" } else { "reject" }
        )
    }
}

#[derive(Debug, Default)]
pub struct Curation {
    pub rows: Vec<ManifestRow>,
    pub accepted: Vec<PairRecord>,
    /// Sources skipped with the reason (missing partner, unreadable file, size mismatch).
    pub skipped: Vec<(String, String)>,
}

impl Curation {
    pub fn extracted(&self) -> usize {
        self.rows.len()
    }

    pub fn accepted_count(&self) -> usize {
        self.rows.iter().filter(|r| r.accepted).count()
    }

    pub fn rejected_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.accepted).count()
    }

    pub fn manifest(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.to_line());
        }
        s
    }

    /// Writes accepted patches as `low/<id>_r<row>_c<col>.png` and the
    /// matching `ref/` file under `dir`.
    pub fn write_patches(&self, dir: &Path) -> Result<(), DataError> {
        for sub in ["low", "ref"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        for rec in &self.accepted {
            let (r, c) = rec.origin.unwrap_or((0, 0));
            let stem = Path::new(&rec.id).file_stem().and_then(|s| s.to_str()).unwrap_or(&rec.id).to_string();
            let name = format!("{stem}_r{r}_c{c}.png");
            save_image(&rec.low, dir.join("low").join(&name))?;
            save_image(&rec.reference, dir.join("ref").join(&name))?;
        }
        Ok(())
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>, DataError> {
    if !dir.is_dir() {
        return Ok(BTreeSet::new());
    }
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_file() && is_image_path(&p) {
            if let Some(n) = p.file_name().and_then(|n| n.to_str()) {
                names.insert(n.to_string());
            }
        }
    }
    Ok(names)
}

/// Source ids present in either `low/` or `ref/`, sorted, with their paths.
/// A missing partner yields `None` on that side.
pub fn list_pairs(corpus: &Path) -> Result<Vec<(String, Option<PathBuf>, Option<PathBuf>)>, DataError> {
    let (low_dir, ref_dir) = (corpus.join("low"), corpus.join("ref"));
    if !low_dir.is_dir() && !ref_dir.is_dir() {
        return Err(DataError::Invalid(format!(
            "{}: expected paired directories low/ and ref/",
            corpus.display()
        )));
    }
    let low = image_names(&low_dir)?;
    let refs = image_names(&ref_dir)?;
    Ok(low
        .union(&refs)
        .map(|n| {
            (
                n.clone(),
                low.contains(n).then(|| low_dir.join(n)),
                refs.contains(n).then(|| ref_dir.join(n)),
            )
        })
        .collect())
}

/// Extract, filter and record every pair of a `low/` + `ref/` corpus in
/// sorted source-id order. Pairs that cannot be read are skipped and logged.
pub fn curate_corpus(corpus: &Path, cfg: &CurationConfig, scorer: &dyn ConfidenceScorer) -> Result<Curation, DataError> {
    let mut out = Curation::default();
    for (id, low, reference) in list_pairs(corpus)? {
        let (low, reference) = match (low, reference) {
            (Some(l), Some(r)) => (l, r),
            (l, _) => {
                let side = if l.is_none() { "low" } else { "ref" };
                let msg = format!("missing partner in {side}/");
                log::warn!("{id}: {msg}");
                out.skipped.push((id, msg));
                continue;
            }
        };
        let pair = load_image(&low)
            .and_then(|l| Ok((l, load_image(&reference)?)))
            .and_then(|(l, r)| PairRecord::new(id.clone(), l, r));
        let pair = match pair {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{id}: {e}");
                out.skipped.push((id, e.to_string()));
                continue;
            }
        };
        for mut rec in extract_patches(&pair, cfg.patch_size, cfg.stride) {
            for &f in &cfg.order {
                apply_filter(&mut rec, f, cfg, scorer)?;
            }
            out.rows.push(ManifestRow::from_record(&rec));
            if rec.accepted() {
                out.accepted.push(rec);
            }
        }
    }
    Ok(out)
}
