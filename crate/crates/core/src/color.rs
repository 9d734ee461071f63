//! Luminance / chrominance split of RGB images.
//!
//! Luminance is the fixed weighted sum `0.299 R + 0.587 G + 0.114 B`;
//! chrominance is the full three-channel residual `I - L` and may be
//! negative. Both directions are differentiable tensor operations.
//!
//! Recomposition is exact: the stored luminance is chosen among the doubles
//! within a few ulps of the weighted sum so that `(I_k - L) + L == I_k` holds
//! bit for bit in every channel. When no such neighbour exists (a channel far
//! below the luminance's ulp, e.g. `1/255` next to `0.9`) the plain weighted
//! sum is kept.

use crate::tensor::{self, GradFn, Tensor, TensorError};

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

/// Ulps searched on either side of the weighted sum.
const NUDGE_ULPS: usize = 4;

/// An RGB image as a `[3, H, W]` tensor. Inputs are nominally in `[0, 1]`;
/// network predictions are unconstrained.
#[derive(Clone, Debug)]
pub struct RgbImage {
    pixels: Tensor,
}

impl RgbImage {
    pub fn new(pixels: Tensor) -> Result<Self, TensorError> {
        if pixels.ndim() != 3 || pixels.shape()[0] != 3 {
            return Err(tensor_invalid(format!("expected [3, H, W], got {:?}", pixels.shape())));
        }
        Ok(RgbImage { pixels })
    }

    /// Planar data in channel-major order.
    pub fn from_planar(height: usize, width: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        RgbImage::new(Tensor::from_vec(vec![3, height, width], data)?)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let plane = height * width;
        let data = rgb.iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect();
        RgbImage::from_planar(height, width, data).expect("positive extents")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        RgbImage::from_planar(height, width, data).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor {
        self.pixels
    }

    pub fn data(&self) -> &[f64] {
        self.pixels.data()
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data()[(channel * self.height() + row) * self.width() + col]
    }

    /// Copy of the `height × width` window at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Option<RgbImage> {
        if height == 0 || width == 0 || row + height > self.height() || col + width > self.width() {
            return None;
        }
        Some(RgbImage::from_fn(height, width, |c, r, x| self.get(c, row + r, col + x)))
    }

    /// Adds a leading batch axis: `[1, 3, H, W]`.
    pub fn to_batch(&self) -> Tensor {
        tensor::reshape(&self.pixels, &[1, 3, self.height(), self.width()]).expect("same element count")
    }

    /// Stacks equally sized images into `[N, 3, H, W]`.
    pub fn stack(images: &[RgbImage]) -> Result<Tensor, TensorError> {
        let first = images.first().ok_or_else(|| tensor_invalid("cannot stack zero images"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.height() != h || img.width() != w {
                return Err(TensorError::Shape {
                    op: "stack",
                    lhs: first.pixels.shape().to_vec(),
                    rhs: img.pixels.shape().to_vec(),
                });
            }
            data.extend_from_slice(img.data());
        }
        Tensor::from_vec(vec![images.len(), 3, h, w], data)
    }

    /// Splits `[N, 3, H, W]` into images.
    pub fn unstack(batch: &Tensor) -> Result<Vec<RgbImage>, TensorError> {
        let [n, 3, h, w] = *batch.shape() else {
            return Err(tensor_invalid(format!("expected [N, 3, H, W], got {:?}", batch.shape())));
        };
        let plane = 3 * h * w;
        (0..n)
            .map(|i| RgbImage::from_planar(h, w, batch.data()[i * plane..(i + 1) * plane].to_vec()))
            .collect()
    }
}

fn tensor_invalid(msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op: "rgb", msg: msg.into() }
}

/// Luminance map and chrominance residual of an image (or a batch of them).
#[derive(Clone, Debug)]
pub struct LcPair {
    /// `[.., 1, H, W]`
    pub luminance: Tensor,
    /// `[.., 3, H, W]`
    pub chrominance: Tensor,
}

fn weighted_sum(r: f64, g: f64, b: f64) -> f64 {
    // 0.587 = 1 - 0.299 - 0.114; this grouping is exact for gray pixels.
    g + LUMA_R * (r - g) + LUMA_B * (b - g)
}

fn reconstructs(rgb: [f64; 3], l: f64) -> bool {
    rgb.iter().all(|&v| (v - l) + l == v)
}

/// Luminance of one pixel, nudged by at most [`NUDGE_ULPS`] so that the
/// residual recomposes exactly whenever that is representable.
pub fn pixel_luminance(rgb: [f64; 3]) -> f64 {
    let base = weighted_sum(rgb[0], rgb[1], rgb[2]);
    if !base.is_finite() || reconstructs(rgb, base) {
        return base;
    }
    let (mut up, mut down) = (base, base);
    for _ in 0..NUDGE_ULPS {
        up = up.next_up();
        if reconstructs(rgb, up) {
            return up;
        }
        down = down.next_down();
        if reconstructs(rgb, down) {
            return down;
        }
    }
    base
}

struct LuminanceFn {
    plane: usize,
    inputs: [Tensor; 1],
}

impl GradFn for LuminanceFn {
    fn name(&self) -> &'static str {
        "luminance"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = self.plane;
        let mut gx = vec![0.0; self.inputs[0].numel()];
        for (n, gl) in g.chunks(p).enumerate() {
            let base = n * 3 * p;
            for (k, coeff) in [LUMA_R, LUMA_G, LUMA_B].into_iter().enumerate() {
                gx[base + k * p..base + (k + 1) * p]
                    .iter_mut()
                    .zip(gl)
                    .for_each(|(d, &v)| *d = coeff * v);
            }
        }
        vec![Some(gx)]
    }
}

fn channel_axis(x: &Tensor) -> Result<usize, TensorError> {
    match x.shape() {
        [3, _, _] => Ok(0),
        [_, 3, _, _] => Ok(1),
        s => Err(TensorError::Invalid {
            op: "luminance",
            msg: format!("expected [3,H,W] or [N,3,H,W], got {s:?}"),
        }),
    }
}

/// Luminance of `[3,H,W]` / `[N,3,H,W]` as `[1,H,W]` / `[N,1,H,W]`.
pub fn luminance(x: &Tensor) -> Result<Tensor, TensorError> {
    let axis = channel_axis(x)?;
    let nd = x.ndim();
    let plane = x.shape()[nd - 2] * x.shape()[nd - 1];
    let src = x.data();
    let mut out = Vec::with_capacity(x.numel() / 3);
    for img in src.chunks(3 * plane) {
        let (r, rest) = img.split_at(plane);
        let (g, b) = rest.split_at(plane);
        out.extend((0..plane).map(|i| pixel_luminance([r[i], g[i], b[i]])));
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_op(shape, out, LuminanceFn { plane, inputs: [x.clone()] }))
}

/// Splits an image tensor into luminance and chrominance.
pub fn decompose_tensor(x: &Tensor) -> Result<LcPair, TensorError> {
    let axis = channel_axis(x)?;
    let luminance = luminance(x)?;
    let chrominance = tensor::sub(x, &tensor::broadcast_axis(&luminance, axis, 3)?)?;
    Ok(LcPair { luminance, chrominance })
}

/// Adds the luminance back onto every chrominance channel.
pub fn recompose_tensor(lc: &LcPair) -> Result<Tensor, TensorError> {
    let axis = channel_axis(&lc.chrominance)?;
    let expected: Vec<usize> = lc
        .chrominance
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &d)| if i == axis { 1 } else { d })
        .collect();
    if lc.luminance.shape() != expected.as_slice() {
        return Err(TensorError::Shape {
            op: "recompose",
            lhs: lc.luminance.shape().to_vec(),
            rhs: lc.chrominance.shape().to_vec(),
        });
    }
    tensor::add(&lc.chrominance, &tensor::broadcast_axis(&lc.luminance, axis, 3)?)
}

pub fn decompose(img: &RgbImage) -> LcPair {
    decompose_tensor(img.pixels()).expect("RgbImage is always [3, H, W]")
}

pub fn recompose(lc: &LcPair) -> Result<RgbImage, TensorError> {
    RgbImage::new(recompose_tensor(lc)?)
}
