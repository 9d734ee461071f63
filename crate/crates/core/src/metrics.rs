//! Image-quality metrics, distribution summaries and Bradley–Terry
//! aggregation of pairwise preferences.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::color::{pixel_luminance, RgbImage};
use crate::data::{mean_intensity, variance_of_laplacian};

/// Value reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("images differ in size: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("image {h}x{w} is smaller than the {window}x{window} SSIM window")]
    TooSmall { h: usize, w: usize, window: usize },
    #[error("comparison graph is disconnected; components: {}", format_components(.0))]
    Disconnected(Vec<Vec<String>>),
    #[error("invalid ranking outcome: {0}")]
    InvalidOutcome(String),
    #[error("no data: {0}")]
    Empty(&'static str),
}

fn format_components(c: &[Vec<String>]) -> String {
    c.iter().map(|g| format!("{{{}}}", g.join(", "))).collect::<Vec<_>>().join(" ")
}

fn same_size(a: &RgbImage, b: &RgbImage) -> Result<(), MetricError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(MetricError::Shape((a.height(), a.width()), (b.height(), b.width())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all samples, capped at
/// [`PSNR_CAP_DB`] (which is also returned for identical images).
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn luminance_plane(img: &RgbImage) -> Vec<f64> {
    let plane = img.height() * img.width();
    let d = img.data();
    (0..plane).map(|i| pixel_luminance([d[i], d[plane + i], d[2 * plane + i]])).collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Single-scale SSIM of the luminance channels (peak 1), averaged over
/// every position where the Gaussian window fits inside the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall { h, w, window: SSIM_WINDOW });
    }
    let (la, lb) = (luminance_plane(a), luminance_plane(b));
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let k = SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let at = |img: &[f64], i: usize| img[(r + i / k) * w + c + i % k];
            let (mut ma, mut mb) = (0.0, 0.0);
            for (i, wt) in win.iter().enumerate() {
                ma += wt * at(&la, i);
                mb += wt * at(&lb, i);
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for (i, wt) in win.iter().enumerate() {
                let (da, db) = (at(&la, i) - ma, at(&lb, i) - mb);
                va += wt * da * da;
                vb += wt * db * db;
                cov += wt * da * db;
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One pairwise preference observation, repeated `weight` times.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingOutcome {
    pub winner: String,
    pub loser: String,
    pub weight: f64,
}

impl RankingOutcome {
    pub fn new(winner: impl Into<String>, loser: impl Into<String>, weight: f64) -> Self {
        RankingOutcome {
            winner: winner.into(),
            loser: loser.into(),
            weight,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BtOptions {
    /// Added to every item's win total; `0` disables smoothing.
    pub win_smoothing: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BtOptions {
    fn default() -> Self {
        BtOptions {
            win_smoothing: 0.0,
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

impl BtOptions {
    pub fn smoothed() -> Self {
        BtOptions {
            win_smoothing: 1e-9,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct BtFit {
    /// Item ids in sorted order.
    pub ids: Vec<String>,
    /// Strengths aligned with `ids`, summing to 1.
    pub strengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BtFit {
    pub fn strength(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|i| i == id).map(|k| self.strengths[k])
    }

    /// Ids ordered from strongest to weakest (ties by id).
    pub fn ranking(&self) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| self.strengths[b].total_cmp(&self.strengths[a]).then(a.cmp(&b)));
        order.into_iter().map(|k| self.ids[k].clone()).collect()
    }
}

/// Aggregated win counts: `wins[i][j]` = weight of `i` beating `j`.
struct Comparisons {
    ids: Vec<String>,
    wins: Vec<Vec<f64>>,
}

fn tabulate(outcomes: &[RankingOutcome]) -> Result<Comparisons, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::Empty("no ranking outcomes"));
    }
    let mut index = BTreeMap::new();
    for o in outcomes {
        if o.winner == o.loser {
            return Err(MetricError::InvalidOutcome(format!("{} cannot beat itself", o.winner)));
        }
        if !(o.weight >= 1.0) || !o.weight.is_finite() {
            return Err(MetricError::InvalidOutcome(format!(
                "weight {} for {} over {} is below 1",
                o.weight, o.winner, o.loser
            )));
        }
        index.entry(o.winner.clone()).or_insert(0);
        index.entry(o.loser.clone()).or_insert(0);
    }
    let ids: Vec<String> = index.keys().cloned().collect();
    for (k, id) in ids.iter().enumerate() {
        index.insert(id.clone(), k);
    }
    let n = ids.len();
    let mut wins = vec![vec![0.0; n]; n];
    for o in outcomes {
        wins[index[&o.winner]][index[&o.loser]] += o.weight;
    }
    Ok(Comparisons { ids, wins })
}

fn components(c: &Comparisons) -> Vec<Vec<String>> {
    let n = c.ids.len();
    let mut label = vec![usize::MAX; n];
    let mut groups = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let g = groups.len();
        let mut stack = vec![start];
        label[start] = g;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in 0..n {
                if label[j] == usize::MAX && (c.wins[i][j] > 0.0 || c.wins[j][i] > 0.0) {
                    label[j] = g;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        groups.push(members.into_iter().map(|i| c.ids[i].clone()).collect());
    }
    groups
}

fn log_likelihood(c: &Comparisons, pi: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, row) in c.wins.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                ll += w * (pi[i].ln() - (pi[i] + pi[j]).ln());
            }
        }
    }
    ll
}

/// Maximum-likelihood Bradley–Terry strengths by minorization–maximization.
pub fn bradley_terry_fit(outcomes: &[RankingOutcome], opts: &BtOptions) -> Result<BtFit, MetricError> {
    let c = tabulate(outcomes)?;
    let groups = components(&c);
    if groups.len() > 1 {
        return Err(MetricError::Disconnected(groups));
    }
    let n = c.ids.len();
    let won: Vec<f64> = c.wins.iter().map(|r| r.iter().sum::<f64>() + opts.win_smoothing).collect();
    let mut pi = vec![1.0 / n as f64; n];
    let mut ll = log_likelihood(&c, &pi);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let denom: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (c.wins[i][j] + c.wins[j][i]) / (pi[i] + pi[j]))
                    .sum();
                won[i] / denom
            })
            .collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= total);
        let change = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| if *b > 0.0 { ((a - b) / b).abs() } else { (a - b).abs() })
            .fold(0.0, f64::max);
        pi = next;
        let next_ll = log_likelihood(&c, &pi);
        debug_assert!(
            !(next_ll < ll - 1e-9 * ll.abs().max(1.0)),
            "log-likelihood decreased from {ll} to {next_ll}"
        );
        ll = next_ll;
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(BtFit {
        ids: c.ids,
        strengths: pi,
        iterations,
        converged,
    })
}

/// Log-likelihood of given strengths; exposed for independent checks.
pub fn bradley_terry_log_likelihood(outcomes: &[RankingOutcome], strengths: &BTreeMap<String, f64>) -> Result<f64, MetricError> {
    let c = tabulate(outcomes)?;
    let pi: Vec<f64> = c
        .ids
        .iter()
        .map(|id| strengths.get(id).copied().ok_or_else(|| MetricError::InvalidOutcome(format!("no strength for {id}"))))
        .collect::<Result<_, _>>()?;
    Ok(log_likelihood(&c, &pi))
}

/// Fixed-range histogram; values outside `[lo, hi]` are clamped into the
/// end bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let span = hi - lo;
        for &v in values {
            let k = if span > 0.0 { ((v - lo) / span * bins as f64).floor() } else { 0.0 };
            counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageStats {
    /// Mean of all channel samples on the 0–255 scale.
    pub mean_intensity: f64,
    pub sharpness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    pub rows: Vec<ImageStats>,
    pub intensity: Histogram,
    pub sharpness: Histogram,
}

/// Per-image intensity and sharpness plus their 32-bin histograms.
/// Intensity bins span 0–255; sharpness bins span 0 to the largest value.
pub fn distribution_report(images: &[RgbImage]) -> Result<DistributionReport, MetricError> {
    if images.is_empty() {
        return Err(MetricError::Empty("distribution report needs at least one image"));
    }
    let rows: Vec<ImageStats> = images
        .iter()
        .map(|img| ImageStats {
            mean_intensity: mean_intensity(img),
            sharpness: variance_of_laplacian(img),
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_intensity).collect();
    let sharp: Vec<f64> = rows.iter().map(|r| r.sharpness).collect();
    let top = sharp.iter().cloned().fold(0.0, f64::max);
    Ok(DistributionReport {
        intensity: Histogram::build(&means, 0.0, 255.0, HISTOGRAM_BINS),
        sharpness: Histogram::build(&sharp, 0.0, top, HISTOGRAM_BINS),
        rows,
    })
}

impl DistributionReport {
    /// Per-image rows followed by the two histograms, tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("index\tmean_intensity\tsharpness\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{:.6}\t{:.9}", r.mean_intensity, r.sharpness);
        }
        for (name, h) in [("intensity", &self.intensity), ("sharpness", &self.sharpness)] {
            let _ = writeln!(s, "# histogram {name} lo={} hi={} bins={}", h.lo, h.hi, h.counts.len());
            let counts: Vec<String> = h.counts.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "# {}", counts.join("\t"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub pair_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-pair metric table with a footer of column means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn push(&mut self, pair_id: impl Into<String>, psnr: f64, ssim: f64) {
        self.rows.push(ResultRow {
            pair_id: pair_id.into(),
            psnr,
            ssim,
        });
    }

    /// `(mean PSNR, mean SSIM)`, or `None` for an empty table.
    pub fn means(&self) -> Option<(f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        Some((
            self.rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            self.rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        ))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# PSNR capped at {PSNR_CAP_DB} dB for identical images; LPIPS: n/a");
        s.push_str("pair_id\tpsnr_db\tssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}", r.pair_id, r.psnr, r.ssim);
        }
        if let Some((p, q)) = self.means() {
            let _ = writeln!(s, "mean\t{p:.6}\t{q:.6}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalised_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(w[0], w[120]);
        assert!(w[60] > w[59]);
    }

    #[test]
    fn histogram_clamps_out_of_range() {
        let h = Histogram::build(&[-1.0, 0.0, 255.0, 300.0], 0.0, 255.0, 32);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[31], 2);
        assert_eq!(h.total(), 4);
    }
}
