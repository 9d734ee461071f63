//! Dataset preparation: image I/O, aligned patch extraction, the brightness
//! and confidence filters, sharpness statistics, histogram matching for
//! visual review, and a synthetic low-light degradation model.

mod curate;
mod io;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg32;

pub use curate::{apply_filter, curate_corpus, list_pairs, Curation, CurationConfig, Filter, ManifestRow, MANIFEST_HEADER};
pub use io::{from_rgb8, is_image_path, load_image, quantize, save_image, to_rgb8};

use crate::color::{pixel_luminance, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {msg}")]
    Image { path: String, msg: String },
    #[error("pair {id}: low and reference differ in size ({low:?} vs {reference:?})")]
    PairSize {
        id: String,
        low: (usize, usize),
        reference: (usize, usize),
    },
    #[error("confidence scorer failed on {id}: {msg}")]
    Scorer { id: String, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Outcome of one filter on one record.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub filter: &'static str,
    pub statistic: f64,
    pub passed: bool,
}

/// An aligned low-light / reference pair, optionally cropped from a larger
/// source, with the verdicts of the filters applied so far.
#[derive(Clone, Debug)]
pub struct PairRecord {
    pub id: String,
    pub low: RgbImage,
    pub reference: RgbImage,
    pub origin: Option<(usize, usize)>,
    pub verdicts: Vec<Verdict>,
}

impl PairRecord {
    pub fn new(id: impl Into<String>, low: RgbImage, reference: RgbImage) -> Result<Self, DataError> {
        let id = id.into();
        let (l, r) = ((low.height(), low.width()), (reference.height(), reference.width()));
        if l != r {
            return Err(DataError::PairSize { id, low: l, reference: r });
        }
        Ok(PairRecord {
            id,
            low,
            reference,
            origin: None,
            verdicts: Vec::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.low.height()
    }

    pub fn width(&self) -> usize {
        self.low.width()
    }

    /// True when every recorded filter passed.
    pub fn accepted(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Top-left offsets of `size`-long windows stepping by `stride` along an
/// axis of length `len`, with a final window snapped to the far border.
pub fn window_starts(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if size == 0 || size > len || stride == 0 {
        return Vec::new();
    }
    let last = len - size;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Aligned `size × size` crops at identical coordinates in both images,
/// row-major over the window grid. Empty when `size` exceeds either extent.
pub fn extract_patches(pair: &PairRecord, size: usize, stride: usize) -> Vec<PairRecord> {
    if size > pair.height().min(pair.width()) {
        log::warn!(
            "pair {}: patch size {size} exceeds image {}x{}; no patches",
            pair.id,
            pair.height(),
            pair.width()
        );
        return Vec::new();
    }
    let mut out = Vec::new();
    for r in window_starts(pair.height(), size, stride) {
        for c in window_starts(pair.width(), size, stride) {
            let crop = |img: &RgbImage| img.crop(r, c, size, size).expect("window inside image");
            let (r0, c0) = pair.origin.unwrap_or((0, 0));
            out.push(PairRecord {
                id: pair.id.clone(),
                low: crop(&pair.low),
                reference: crop(&pair.reference),
                origin: Some((r0 + r, c0 + c)),
                verdicts: pair.verdicts.clone(),
            });
        }
    }
    out
}

/// Mean of all channel samples on the 0–255 scale.
pub fn mean_intensity(img: &RgbImage) -> f64 {
    img.data().iter().map(|v| v * 255.0).sum::<f64>() / img.data().len() as f64
}

pub const DEFAULT_BRIGHTNESS_THRESHOLD: f64 = 10.0;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.90;

/// Rejects references whose mean intensity is strictly below `threshold`.
pub fn brightness_filter(reference: &RgbImage, threshold: f64) -> Verdict {
    let m = mean_intensity(reference);
    Verdict {
        filter: "brightness",
        statistic: m,
        passed: m >= threshold,
    }
}

/// A quality score in `[0, 1]` for a reference image.
pub trait ConfidenceScorer {
    fn score(&self, img: &RgbImage) -> Result<f64, String>;
}

/// Returns the same score for every image.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl ConfidenceScorer for ConstantScorer {
    fn score(&self, _img: &RgbImage) -> Result<f64, String> {
        Ok(self.0)
    }
}

/// Sharpness saturated against a reference scale, discounted by the share of
/// clipped highlights: `s / (s + k) · (1 - clipped)`.
#[derive(Clone, Copy, Debug)]
pub struct HeuristicScorer {
    pub sharpness_scale: f64,
    pub highlight_level: f64,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        HeuristicScorer {
            sharpness_scale: 1e-3,
            highlight_level: 0.98,
        }
    }
}

impl ConfidenceScorer for HeuristicScorer {
    fn score(&self, img: &RgbImage) -> Result<f64, String> {
        let s = variance_of_laplacian(img);
        if !s.is_finite() {
            return Err(format!("non-finite sharpness {s}"));
        }
        let lum = luminance_plane(img);
        let clipped = lum.iter().filter(|&&l| l >= self.highlight_level).count() as f64 / lum.len() as f64;
        Ok(s / (s + self.sharpness_scale) * (1.0 - clipped))
    }
}

pub fn confidence_filter(
    id: &str,
    reference: &RgbImage,
    scorer: &dyn ConfidenceScorer,
    threshold: f64,
) -> Result<Verdict, DataError> {
    let score = scorer.score(reference).map_err(|msg| DataError::Scorer { id: id.into(), msg })?;
    if !(0.0..=1.0).contains(&score) {
        return Err(DataError::Scorer {
            id: id.into(),
            msg: format!("score {score} outside [0, 1]"),
        });
    }
    Ok(Verdict {
        filter: "confidence",
        statistic: score,
        passed: score >= threshold,
    })
}

fn luminance_plane(img: &RgbImage) -> Vec<f64> {
    let plane = img.height() * img.width();
    let d = img.data();
    (0..plane).map(|i| pixel_luminance([d[i], d[plane + i], d[2 * plane + i]])).collect()
}

/// Population variance of the 4-neighbour Laplacian of the luminance, with
/// edge samples replicated beyond the border.
pub fn variance_of_laplacian(img: &RgbImage) -> f64 {
    let (h, w) = (img.height(), img.width());
    let lum = luminance_plane(img);
    let at = |r: isize, c: isize| lum[r.clamp(0, h as isize - 1) as usize * w + c.clamp(0, w as isize - 1) as usize];
    let mut resp = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            resp.push(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub const HISTOGRAM_LEVELS: usize = 256;

fn level(v: f64) -> usize {
    quantize(v) as usize
}

/// Cumulative distribution of the 8-bit levels of one channel.
pub fn channel_cdf(img: &RgbImage, channel: usize) -> Vec<f64> {
    let plane = img.height() * img.width();
    let mut hist = vec![0usize; HISTOGRAM_LEVELS];
    for &v in &img.data()[channel * plane..(channel + 1) * plane] {
        hist[level(v)] += 1;
    }
    let mut acc = 0;
    hist.iter()
        .map(|&k| {
            acc += k;
            acc as f64 / plane as f64
        })
        .collect()
}

/// Per-channel 256-level histogram specification: every source level maps to
/// the occupied target level whose CDF value is nearest (ties to the lower
/// level). Intended for visual review, not for training data.
pub fn histogram_match(source: &RgbImage, target: &RgbImage) -> RgbImage {
    let plane = source.height() * source.width();
    let mut maps = Vec::with_capacity(3);
    for ch in 0..3 {
        let cs = channel_cdf(source, ch);
        let ct = channel_cdf(target, ch);
        let occupied: Vec<usize> = (0..HISTOGRAM_LEVELS).filter(|&b| ct[b] > if b == 0 { 0.0 } else { ct[b - 1] }).collect();
        let map: Vec<f64> = cs
            .iter()
            .map(|&p| {
                let mut best = occupied[0];
                for &t in &occupied {
                    if (ct[t] - p).abs() < (ct[best] - p).abs() {
                        best = t;
                    }
                }
                best as f64 / 255.0
            })
            .collect();
        maps.push(map);
    }
    RgbImage::from_fn(source.height(), source.width(), |c, r, x| {
        maps[c][level(source.data()[c * plane + r * source.width() + x])]
    })
}

/// Parameters of the synthetic low-light model
/// `clamp(gain · clean^gamma + n)`, `n ~ N(0, read² + shot · signal)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeParams {
    pub gamma: f64,
    pub gain: f64,
    pub read_noise: f64,
    pub shot_noise: f64,
    pub seed: u64,
}

impl DegradeParams {
    pub fn identity() -> Self {
        DegradeParams {
            gamma: 1.0,
            gain: 1.0,
            read_noise: 0.0,
            shot_noise: 0.0,
            seed: 0,
        }
    }

    /// Random parameters with gamma in `[2, 3.5]` and gain in `[0.1, 0.5]`
    /// and mild noise.
    pub fn sample(rng: &mut Pcg32) -> Self {
        use rand::Rng;
        DegradeParams {
            gamma: rng.random_range(2.0..=3.5),
            gain: rng.random_range(0.1..=0.5),
            read_noise: rng.random_range(0.0..=0.01),
            shot_noise: rng.random_range(0.0..=0.002),
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let ok = self.gamma >= 1.0
            && self.gain > 0.0
            && self.gain <= 1.0
            && self.read_noise >= 0.0
            && self.shot_noise >= 0.0
            && [self.gamma, self.gain, self.read_noise, self.shot_noise].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(DataError::Invalid(format!("invalid degradation parameters {self:?}")))
        }
    }
}

pub fn synth_degrade(clean: &RgbImage, p: &DegradeParams) -> Result<RgbImage, DataError> {
    p.validate()?;
    let mut rng = Pcg32::seed_from_u64(p.seed);
    let data = clean
        .data()
        .iter()
        .map(|&v| {
            let curve = if p.gamma == 1.0 { v } else { v.max(0.0).powf(p.gamma) };
            let signal = p.gain * curve;
            let var = p.read_noise * p.read_noise + p.shot_noise * signal.max(0.0);
            let noise = if var > 0.0 {
                Normal::new(0.0, var.sqrt()).expect("positive std").sample(&mut rng)
            } else {
                0.0
            };
            (signal + noise).clamp(0.0, 1.0)
        })
        .collect();
    Ok(RgbImage::from_planar(clean.height(), clean.width(), data).expect("same extents"))
}

/// A smooth, deterministic "clean" test scene with edges and colour.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> RgbImage {
    use rand::Rng;
    let mut rng = Pcg32::seed_from_u64(seed);
    let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let freq: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.15..0.6));
    let cut = rng.random_range(0.3..0.7) * width as f64;
    RgbImage::from_fn(height, width, |c, r, x| {
        let (y, xf) = (r as f64, x as f64);
        let wave = 0.5 + 0.2 * (freq[c] * xf + phase[c]).sin() + 0.15 * (freq[c + 3] * y + phase[c + 3]).cos();
        let edge = if xf + 0.5 * y > cut { 0.12 } else { -0.12 };
        (wave + edge).clamp(0.05, 0.95)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_grid() {
        assert_eq!(window_starts(1024, 512, 512), vec![0, 512]);
        assert_eq!(window_starts(600, 512, 512), vec![0, 88]);
        assert_eq!(window_starts(10, 4, 3), vec![0, 3, 6]);
        assert_eq!(window_starts(11, 4, 3), vec![0, 3, 6, 7]);
        assert!(window_starts(3, 4, 4).is_empty());
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        for k in 0..=255u8 {
            assert_eq!(quantize(k as f64 / 255.0), k);
        }
    }

    #[test]
    fn intensity_of_integer_levels_is_exact() {
        for k in 0..=255 {
            let img = RgbImage::filled(3, 5, [k as f64 / 255.0; 3]);
            assert_eq!(mean_intensity(&img), k as f64);
        }
    }
}
