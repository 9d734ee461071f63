use super::fault::{self, FaultOp};
use super::gemm::{gemm, MatView};
use super::{invalid, GradFn, Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(invalid(op, format!("axis {axis} out of range for shape {:?}", t.shape())));
    }
    Ok(())
}

/// `(outer, len, inner)` split of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

// ---------------------------------------------------------------------------
// elementwise

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryFn {
    kind: Binary,
    inputs: [Tensor; 2],
}

impl GradFn for BinaryFn {
    fn name(&self) -> &'static str {
        match self.kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [a, b] = &self.inputs;
        match self.kind {
            Binary::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Binary::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
            Binary::Mul => {
                let ga = a.requires_grad().then(|| g.iter().zip(b.data()).map(|(g, y)| g * y).collect());
                let gb = b.requires_grad().then(|| g.iter().zip(a.data()).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            }
        }
    }
}

fn binary(kind: Binary, op: &'static str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(op, a, b)?;
    let f: fn(f64, f64) -> f64 = match kind {
        Binary::Add => |x, y| x + y,
        Binary::Sub => |x, y| x - y,
        Binary::Mul => |x, y| x * y,
    };
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        BinaryFn {
            kind,
            inputs: [a.clone(), b.clone()],
        },
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(Binary::Add, "add", a, b)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(Binary::Sub, "sub", a, b)
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(Binary::Mul, "mul", a, b)
}

struct ScaleFn {
    factor: f64,
    inputs: [Tensor; 1],
}

impl GradFn for ScaleFn {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.factor).collect())]
    }
}

/// Multiplication by a constant.
pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        ScaleFn {
            factor,
            inputs: [x.clone()],
        },
    )
}

struct DivScalarFn {
    inputs: [Tensor; 2],
}

impl GradFn for DivScalarFn {
    fn name(&self) -> &'static str {
        "div_scalar"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [x, t] = &self.inputs;
        let d = t.data()[0];
        let gx = x.requires_grad().then(|| g.iter().map(|v| v / d).collect());
        let gt = t.requires_grad().then(|| {
            let s: f64 = g.iter().zip(x.data()).map(|(g, x)| g * x).sum();
            vec![-s / (d * d)]
        });
        vec![gx, gt]
    }
}

/// Divides every element of `x` by the single value held in `divisor`.
pub fn div_scalar(x: &Tensor, divisor: &Tensor) -> Result<Tensor> {
    if divisor.numel() != 1 {
        return Err(TensorError::Shape {
            op: "div_scalar",
            lhs: x.shape().to_vec(),
            rhs: divisor.shape().to_vec(),
        });
    }
    let d = divisor.data()[0];
    let data = x.data().iter().map(|v| v / d).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        DivScalarFn {
            inputs: [x.clone(), divisor.clone()],
        },
    ))
}

struct AbsFn {
    inputs: [Tensor; 1],
}

impl GradFn for AbsFn {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = self.inputs[0].data();
        // subgradient 0 at the kink
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        vec![Some(g.iter().zip(x).map(|(g, &v)| g * sign(v)).collect())]
    }
}

pub fn abs(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.abs()).collect();
    Tensor::from_op(x.shape().to_vec(), data, AbsFn { inputs: [x.clone()] })
}

struct ClampFn {
    lo: f64,
    hi: f64,
    inputs: [Tensor; 1],
}

impl GradFn for ClampFn {
    fn name(&self) -> &'static str {
        "clamp"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = self.inputs[0].data();
        let gx = g
            .iter()
            .zip(x)
            .map(|(&g, &v)| if v >= self.lo && v <= self.hi { g } else { 0.0 })
            .collect();
        vec![Some(gx)]
    }
}

pub fn clamp(x: &Tensor, lo: f64, hi: f64) -> Tensor {
    let data = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        ClampFn {
            lo,
            hi,
            inputs: [x.clone()],
        },
    )
}

// ---------------------------------------------------------------------------
// reductions

struct SumFn {
    factor: f64,
    inputs: [Tensor; 1],
}

impl GradFn for SumFn {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.factor; self.inputs[0].numel()])]
    }
}

/// Sum of all elements as a one-element tensor.
pub fn sum(x: &Tensor) -> Tensor {
    let s = x.data().iter().sum();
    Tensor::from_op(
        vec![1],
        vec![s],
        SumFn {
            factor: 1.0,
            inputs: [x.clone()],
        },
    )
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel() as f64;
    let s: f64 = x.data().iter().sum();
    Tensor::from_op(
        vec![1],
        vec![s / n],
        SumFn {
            factor: 1.0 / n,
            inputs: [x.clone()],
        },
    )
}

// ---------------------------------------------------------------------------
// matrix product

struct MatmulFn {
    /// Leading batch extent of `a`.
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// `b` carries its own batch dimension.
    batched_b: bool,
    inputs: [Tensor; 2],
}

impl GradFn for MatmulFn {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [a, b] = &self.inputs;
        let (bs, m, k, n) = (self.batch, self.m, self.k, self.n);
        let mut ga = a.requires_grad().then(|| vec![0.0; a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![0.0; b.numel()]);
        if self.batched_b {
            for i in 0..bs {
                let gi = &g[i * m * n..(i + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    // dA = dC · Bᵀ
                    gemm(
                        gi,
                        MatView::row_major(m, n),
                        &b.data()[i * k * n..],
                        MatView::transposed(k, n),
                        &mut ga[i * m * k..(i + 1) * m * k],
                        0.0,
                    );
                }
                if let Some(gb) = gb.as_mut() {
                    // dB = Aᵀ · dC
                    gemm(
                        &a.data()[i * m * k..],
                        MatView::transposed(m, k),
                        gi,
                        MatView::row_major(m, n),
                        &mut gb[i * k * n..(i + 1) * k * n],
                        0.0,
                    );
                }
            }
        } else {
            let rows = bs * m;
            if let Some(ga) = ga.as_mut() {
                gemm(g, MatView::row_major(rows, n), b.data(), MatView::transposed(k, n), ga, 0.0);
            }
            if let Some(gb) = gb.as_mut() {
                gemm(a.data(), MatView::transposed(rows, k), g, MatView::row_major(rows, n), gb, 0.0);
            }
        }
        if let Some(ga) = ga.as_mut() {
            fault::apply(FaultOp::Matmul, ga);
        }
        vec![ga, gb]
    }
}

/// Matrix product over the last two axes.
///
/// `a` is `[.., m, k]`. `b` is either a shared `[k, n]` matrix (applied to
/// every leading slice of `a`) or `[B, k, n]` matching a 3-d `a` of shape
/// `[B, m, k]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape_err = || TensorError::Shape {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.ndim() < 2 || !(b.ndim() == 2 || (b.ndim() == 3 && a.ndim() == 3)) {
        return Err(shape_err());
    }
    let (m, k) = (a.shape()[a.ndim() - 2], a.shape()[a.ndim() - 1]);
    let batch: usize = a.shape()[..a.ndim() - 2].iter().product();
    let (kb, n) = (b.shape()[b.ndim() - 2], b.shape()[b.ndim() - 1]);
    if k != kb {
        return Err(shape_err());
    }
    let batched_b = b.ndim() == 3;
    if batched_b && b.shape()[0] != a.shape()[0] {
        return Err(shape_err());
    }
    let mut out = vec![0.0; batch * m * n];
    if batched_b {
        for i in 0..batch {
            gemm(
                &a.data()[i * m * k..],
                MatView::row_major(m, k),
                &b.data()[i * k * n..],
                MatView::row_major(k, n),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
    } else {
        gemm(
            a.data(),
            MatView::row_major(batch * m, k),
            b.data(),
            MatView::row_major(k, n),
            &mut out,
            0.0,
        );
    }
    let mut shape = a.shape()[..a.ndim() - 1].to_vec();
    shape.push(n);
    Ok(Tensor::from_op(
        shape,
        out,
        MatmulFn {
            batch,
            m,
            k,
            n,
            batched_b,
            inputs: [a.clone(), b.clone()],
        },
    ))
}

fn transpose_block(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

struct TransposeFn {
    rows: usize,
    cols: usize,
    inputs: [Tensor; 1],
}

impl GradFn for TransposeFn {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (r, c) = (self.rows, self.cols);
        let mut gx = vec![0.0; g.len()];
        for (src, dst) in g.chunks(r * c).zip(gx.chunks_mut(r * c)) {
            transpose_block(src, dst, c, r);
        }
        vec![Some(gx)]
    }
}

/// Swaps the last two axes.
pub fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    if x.ndim() < 2 {
        return Err(invalid("transpose", format!("needs at least 2 axes, got {:?}", x.shape())));
    }
    let nd = x.ndim();
    let (rows, cols) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let mut out = vec![0.0; x.numel()];
    for (src, dst) in x.data().chunks(rows * cols).zip(out.chunks_mut(rows * cols)) {
        transpose_block(src, dst, rows, cols);
    }
    let mut shape = x.shape().to_vec();
    shape.swap(nd - 2, nd - 1);
    Ok(Tensor::from_op(
        shape,
        out,
        TransposeFn {
            rows,
            cols,
            inputs: [x.clone()],
        },
    ))
}

// ---------------------------------------------------------------------------
// softmax

struct SoftmaxFn {
    axis: usize,
    inputs: [Tensor; 1],
}

impl GradFn for SoftmaxFn {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, y: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, len, inner) = split_at_axis(self.inputs[0].shape(), self.axis);
        let mut gx = vec![0.0; y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                for j in 0..len {
                    let p = base + j * inner;
                    gx[p] = y[p] * (g[p] - dot);
                }
            }
        }
        fault::apply(FaultOp::Softmax, &mut gx);
        vec![Some(gx)]
    }
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x, axis)?;
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            if inner == 1 {
                let row = &src[base..base + len];
                let dst = &mut out[base..base + len];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = (v - max).exp();
                    total += *d;
                }
                dst.iter_mut().for_each(|d| *d /= total);
            } else {
                let max = (0..len).map(|j| src[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= total;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        SoftmaxFn {
            axis,
            inputs: [x.clone()],
        },
    ))
}

// ---------------------------------------------------------------------------
// shape manipulation

struct ReshapeFn {
    inputs: [Tensor; 1],
}

impl GradFn for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
        return Err(TensorError::Shape {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        ReshapeFn { inputs: [x.clone()] },
    ))
}

struct ConcatFn {
    axis: usize,
    inputs: Vec<Tensor>,
}

impl GradFn for ConcatFn {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, _, inner) = split_at_axis(self.inputs[0].shape(), self.axis);
        let total: usize = self.inputs.iter().map(|t| t.shape()[self.axis]).sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.inputs.len());
        for t in &self.inputs {
            let len = t.shape()[self.axis];
            if t.requires_grad() {
                let mut gt = Vec::with_capacity(t.numel());
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gt.extend_from_slice(&g[start..start + len * inner]);
                }
                grads.push(Some(gt));
            } else {
                grads.push(None);
            }
            offset += len;
        }
        grads
    }
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
    check_axis("concat", first, axis)?;
    for p in &parts[1..] {
        let compatible = p.ndim() == first.ndim()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::Shape {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let total: usize = parts.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_op(
        shape,
        out,
        ConcatFn {
            axis,
            inputs: parts.to_vec(),
        },
    ))
}

struct NarrowFn {
    axis: usize,
    start: usize,
    len: usize,
    inputs: [Tensor; 1],
}

impl GradFn for NarrowFn {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = &self.inputs[0];
        let (outer, full, inner) = split_at_axis(x.shape(), self.axis);
        let mut gx = vec![0.0; x.numel()];
        let chunk = self.len * inner;
        for o in 0..outer {
            let dst = (o * full + self.start) * inner;
            gx[dst..dst + chunk].copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
        }
        vec![Some(gx)]
    }
}

/// The slice `start..start + len` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    check_axis("narrow", x, axis)?;
    if len == 0 || start + len > x.shape()[axis] {
        return Err(invalid(
            "narrow",
            format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, x.shape()),
        ));
    }
    let (outer, full, inner) = split_at_axis(x.shape(), axis);
    let chunk = len * inner;
    let mut out = Vec::with_capacity(outer * chunk);
    for o in 0..outer {
        let src = (o * full + start) * inner;
        out.extend_from_slice(&x.data()[src..src + chunk]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_op(
        shape,
        out,
        NarrowFn {
            axis,
            start,
            len,
            inputs: [x.clone()],
        },
    ))
}

struct BroadcastFn {
    axis: usize,
    times: usize,
    inputs: [Tensor; 1],
}

impl GradFn for BroadcastFn {
    fn name(&self) -> &'static str {
        "broadcast"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = &self.inputs[0];
        let (outer, _, inner) = split_at_axis(x.shape(), self.axis);
        let mut gx = vec![0.0; x.numel()];
        for o in 0..outer {
            for r in 0..self.times {
                let src = (o * self.times + r) * inner;
                gx[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(&g[src..src + inner])
                    .for_each(|(a, b)| *a += b);
            }
        }
        vec![Some(gx)]
    }
}

/// Repeats a size-1 `axis` `times` times.
pub fn broadcast_axis(x: &Tensor, axis: usize, times: usize) -> Result<Tensor> {
    check_axis("broadcast", x, axis)?;
    if x.shape()[axis] != 1 || times == 0 {
        return Err(invalid(
            "broadcast",
            format!("axis {axis} of {:?} must have extent 1", x.shape()),
        ));
    }
    let (outer, _, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * times * inner);
    for o in 0..outer {
        for _ in 0..times {
            out.extend_from_slice(&x.data()[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = times;
    Ok(Tensor::from_op(
        shape,
        out,
        BroadcastFn {
            axis,
            times,
            inputs: [x.clone()],
        },
    ))
}

/// Mirror index without edge repetition, folded as often as needed.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

struct PadFn {
    src_hw: (usize, usize),
    dst_hw: (usize, usize),
    inputs: [Tensor; 1],
}

impl GradFn for PadFn {
    fn name(&self) -> &'static str {
        "pad_reflect"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = &self.inputs[0];
        let (h, w) = self.src_hw;
        let (hp, wp) = self.dst_hw;
        let planes = x.numel() / (h * w);
        let mut gx = vec![0.0; x.numel()];
        for p in 0..planes {
            for r in 0..hp {
                let sr = reflect_index(r, h);
                for c in 0..wp {
                    let sc = reflect_index(c, w);
                    gx[p * h * w + sr * w + sc] += g[p * hp * wp + r * wp + c];
                }
            }
        }
        vec![Some(gx)]
    }
}

fn spatial(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() < 2 {
        return Err(invalid(op, format!("needs spatial axes, got {:?}", x.shape())));
    }
    let nd = x.ndim();
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    Ok((x.numel() / (h * w), h, w))
}

/// Extends the last two axes by `bottom` rows and `right` columns using
/// mirror reflection (edge sample not repeated).
pub fn pad_reflect(x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
    let (planes, h, w) = spatial("pad_reflect", x)?;
    if bottom == 0 && right == 0 {
        return Ok(x.clone());
    }
    let (hp, wp) = (h + bottom, w + right);
    let mut out = Vec::with_capacity(planes * hp * wp);
    for p in 0..planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for r in 0..hp {
            let row = &plane[reflect_index(r, h) * w..][..w];
            out.extend((0..wp).map(|c| row[reflect_index(c, w)]));
        }
    }
    let nd = x.ndim();
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = hp;
    shape[nd - 1] = wp;
    Ok(Tensor::from_op(
        shape,
        out,
        PadFn {
            src_hw: (h, w),
            dst_hw: (hp, wp),
            inputs: [x.clone()],
        },
    ))
}

struct CropFn {
    src_hw: (usize, usize),
    dst_hw: (usize, usize),
    inputs: [Tensor; 1],
}

impl GradFn for CropFn {
    fn name(&self) -> &'static str {
        "crop"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = &self.inputs[0];
        let (h, w) = self.src_hw;
        let (hc, wc) = self.dst_hw;
        let planes = x.numel() / (h * w);
        let mut gx = vec![0.0; x.numel()];
        for p in 0..planes {
            for r in 0..hc {
                let dst = p * h * w + r * w;
                gx[dst..dst + wc].copy_from_slice(&g[p * hc * wc + r * wc..][..wc]);
            }
        }
        vec![Some(gx)]
    }
}

/// Keeps the top-left `height × width` window of the last two axes.
pub fn crop(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (planes, h, w) = spatial("crop", x)?;
    if height == 0 || width == 0 || height > h || width > w {
        return Err(invalid(
            "crop",
            format!("window {height}x{width} does not fit in {:?}", x.shape()),
        ));
    }
    if height == h && width == w {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(planes * height * width);
    for p in 0..planes {
        for r in 0..height {
            out.extend_from_slice(&x.data()[p * h * w + r * w..][..width]);
        }
    }
    let nd = x.ndim();
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = height;
    shape[nd - 1] = width;
    Ok(Tensor::from_op(
        shape,
        out,
        CropFn {
            src_hw: (h, w),
            dst_hw: (height, width),
            inputs: [x.clone()],
        },
    ))
}
