//! 2-d convolution (cross-correlation, zero padding) and its adjoint.
//!
//! Both directions are lowered to a matrix product through an `im2col`
//! buffer whose rows are `(channel, ky, kx)` and whose columns are output
//! positions.

use super::fault::{self, FaultOp};
use super::gemm::{gemm, MatView};
use super::{invalid, GradFn, Result, Tensor, TensorError};

/// Kernel placement shared by a convolution and its transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output extent of the forward convolution, if at least one.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Per-image spatial bookkeeping: the "image" side (`h × w`) and the grid of
/// kernel placements (`oh × ow`).
#[derive(Clone, Copy)]
struct Layout {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl Layout {
    fn rows(&self) -> usize {
        self.channels * self.g.kernel * self.g.kernel
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.g.kernel == 1 && self.g.stride == 1 && self.g.padding == 0
    }

    /// Visits `(row, col, image offset)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.g.kernel;
        let (s, p) = (self.g.stride as isize, self.g.padding as isize);
        for c in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base_in = (c * self.h + iy as usize) * self.w;
                        let base_col = row * self.cols() + oy * self.ow;
                        for ox in 0..self.ow {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(base_col + ox, base_in + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|col, src| cols[col] = image[src]);
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        image.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|col, dst| image[dst] += cols[col]);
    }
}

fn batch_view(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(invalid(op, format!("expected [C,H,W] or [N,C,H,W], got {:?}", x.shape()))),
    }
}

fn out_shape(x: &Tensor, c: usize, h: usize, w: usize) -> Vec<usize> {
    if x.ndim() == 3 {
        vec![c, h, w]
    } else {
        vec![x.shape()[0], c, h, w]
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::Shape {
                op,
                lhs: vec![channels],
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data().iter().cycle()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(g: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        gb[i % channels] += chunk.iter().sum::<f64>();
    }
    gb
}

fn inputs_of(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Vec<Tensor> {
    let mut v = vec![x.clone(), w.clone()];
    v.extend(b.cloned());
    v
}

struct Conv2dFn {
    batch: usize,
    c_out: usize,
    layout: Layout,
    inputs: Vec<Tensor>,
}

impl GradFn for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let l = self.layout;
        let (rows, cols) = (l.rows(), l.cols());
        let in_plane = l.channels * l.h * l.w;
        let out_plane = self.c_out * cols;
        let mut gx = x.requires_grad().then(|| vec![0.0; x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![0.0; w.numel()]);
        let mut col_buf = vec![0.0; if l.is_pointwise() { 0 } else { rows * cols }];
        let mut dcol = vec![0.0; rows * cols];
        for n in 0..self.batch {
            let gn = &g[n * out_plane..(n + 1) * out_plane];
            let xn = &x.data()[n * in_plane..(n + 1) * in_plane];
            if let Some(gw) = gw.as_mut() {
                let cols_ref: &[f64] = if l.is_pointwise() {
                    xn
                } else {
                    l.im2col(xn, &mut col_buf);
                    &col_buf
                };
                // dW += dY · colsᵀ
                gemm(
                    gn,
                    MatView::row_major(self.c_out, cols),
                    cols_ref,
                    MatView::transposed(rows, cols),
                    gw,
                    1.0,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[n * in_plane..(n + 1) * in_plane];
                if l.is_pointwise() {
                    gemm(w.data(), MatView::transposed(self.c_out, rows), gn, MatView::row_major(self.c_out, cols), dst, 0.0);
                } else {
                    gemm(w.data(), MatView::transposed(self.c_out, rows), gn, MatView::row_major(self.c_out, cols), &mut dcol, 0.0);
                    l.col2im(&dcol, dst);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if let Some(b) = self.inputs.get(2) {
            grads.push(b.requires_grad().then(|| bias_grad(g, self.c_out, cols)));
        }
        grads
    }
}

/// Cross-correlation of `x` (`[C_in,H,W]` or `[N,C_in,H,W]`) with
/// `w` (`[C_out,C_in,k,k]`, `k` odd), zero padding on all sides.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (batch, c_in, h, wd) = batch_view("conv2d", x)?;
    let shape_err = || TensorError::Shape {
        op: "conv2d",
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    let [c_out, wc, k, k2] = *w.shape() else {
        return Err(shape_err());
    };
    if wc != c_in || k != k2 {
        return Err(shape_err());
    }
    if k % 2 == 0 {
        return Err(invalid("conv2d", format!("kernel extent must be odd, got {k}")));
    }
    if stride == 0 {
        return Err(invalid("conv2d", "stride must be at least 1"));
    }
    check_bias("conv2d", bias, c_out)?;
    let g = ConvGeometry { kernel: k, stride, padding };
    let (Some(oh), Some(ow)) = (g.output_len(h), g.output_len(wd)) else {
        return Err(invalid(
            "conv2d",
            format!("output extent < 1 for input {h}x{wd}, kernel {k}, padding {padding}"),
        ));
    };
    let layout = Layout { channels: c_in, h, w: wd, oh, ow, g };
    let (rows, cols) = (layout.rows(), layout.cols());
    let in_plane = c_in * h * wd;
    let mut out = vec![0.0; batch * c_out * cols];
    let mut col_buf = vec![0.0; if layout.is_pointwise() { 0 } else { rows * cols }];
    for n in 0..batch {
        let xn = &x.data()[n * in_plane..(n + 1) * in_plane];
        let cols_ref: &[f64] = if layout.is_pointwise() {
            xn
        } else {
            layout.im2col(xn, &mut col_buf);
            &col_buf
        };
        gemm(
            w.data(),
            MatView::row_major(c_out, rows),
            cols_ref,
            MatView::row_major(rows, cols),
            &mut out[n * c_out * cols..(n + 1) * c_out * cols],
            0.0,
        );
    }
    add_bias(&mut out, bias, cols);
    Ok(Tensor::from_op(
        out_shape(x, c_out, oh, ow),
        out,
        Conv2dFn {
            batch,
            c_out,
            layout,
            inputs: inputs_of(x, w, bias),
        },
    ))
}

struct ConvTransposeFn {
    batch: usize,
    c_in: usize,
    /// Geometry of the forward convolution this operator is the adjoint of;
    /// its "image" is our output and its placement grid is our input.
    layout: Layout,
    inputs: Vec<Tensor>,
}

impl GradFn for ConvTransposeFn {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let l = self.layout;
        let (rows, cols) = (l.rows(), l.cols());
        let out_plane = l.channels * l.h * l.w;
        let in_plane = self.c_in * cols;
        let mut gx = x.requires_grad().then(|| vec![0.0; x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![0.0; w.numel()]);
        let mut dcol = vec![0.0; rows * cols];
        for n in 0..self.batch {
            l.im2col(&g[n * out_plane..(n + 1) * out_plane], &mut dcol);
            if let Some(gx) = gx.as_mut() {
                // dX = W · im2col(dY)
                gemm(
                    w.data(),
                    MatView::row_major(self.c_in, rows),
                    &dcol,
                    MatView::row_major(rows, cols),
                    &mut gx[n * in_plane..(n + 1) * in_plane],
                    0.0,
                );
            }
            if let Some(gw) = gw.as_mut() {
                // dW += X · im2col(dY)ᵀ
                gemm(
                    &x.data()[n * in_plane..(n + 1) * in_plane],
                    MatView::row_major(self.c_in, cols),
                    &dcol,
                    MatView::transposed(rows, cols),
                    gw,
                    1.0,
                );
            }
        }
        if let Some(gx) = gx.as_mut() {
            fault::apply(FaultOp::ConvTranspose2d, gx);
        }
        let mut grads = vec![gx, gw];
        if let Some(b) = self.inputs.get(2) {
            grads.push(b.requires_grad().then(|| bias_grad(g, l.channels, l.h * l.w)));
        }
        grads
    }
}

/// Adjoint of [`conv2d`] with the same weights: `x` is `[C_in,H,W]` or
/// `[N,C_in,H,W]`, `w` is `[C_in,C_out,k,k]` and the output extent is
/// `(H-1)·stride - 2·padding + k + output_padding`.
///
/// With `k = 3`, `stride = 2`, `padding = 1`, `output_padding = 1` the output
/// is exactly twice the input in each spatial direction.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (batch, c_in, h, wd) = batch_view("conv_transpose2d", x)?;
    let shape_err = || TensorError::Shape {
        op: "conv_transpose2d",
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    let [wc, c_out, k, k2] = *w.shape() else {
        return Err(shape_err());
    };
    if wc != c_in || k != k2 {
        return Err(shape_err());
    }
    if stride == 0 || output_padding >= stride {
        return Err(invalid(
            "conv_transpose2d",
            format!("need stride >= 1 and output_padding < stride, got {stride} and {output_padding}"),
        ));
    }
    check_bias("conv_transpose2d", bias, c_out)?;
    let extent = |n: usize| ((n - 1) * stride + k + output_padding).checked_sub(2 * padding).filter(|&v| v > 0);
    let (Some(oh), Some(ow)) = (extent(h), extent(wd)) else {
        return Err(invalid("conv_transpose2d", "output extent < 1"));
    };
    let g = ConvGeometry { kernel: k, stride, padding };
    debug_assert_eq!(g.output_len(oh), Some(h));
    let layout = Layout { channels: c_out, h: oh, w: ow, oh: h, ow: wd, g };
    let (rows, cols) = (layout.rows(), layout.cols());
    let in_plane = c_in * cols;
    let out_plane = c_out * oh * ow;
    let mut out = vec![0.0; batch * out_plane];
    let mut col_buf = vec![0.0; rows * cols];
    for n in 0..batch {
        // cols = Wᵀ · x
        gemm(
            w.data(),
            MatView::transposed(c_in, rows),
            &x.data()[n * in_plane..(n + 1) * in_plane],
            MatView::row_major(c_in, cols),
            &mut col_buf,
            0.0,
        );
        layout.col2im(&col_buf, &mut out[n * out_plane..(n + 1) * out_plane]);
    }
    add_bias(&mut out, bias, oh * ow);
    Ok(Tensor::from_op(
        out_shape(x, c_out, oh, ow),
        out,
        ConvTransposeFn {
            batch,
            c_in,
            layout,
            inputs: inputs_of(x, w, bias),
        },
    ))
}
