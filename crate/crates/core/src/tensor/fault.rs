//! Deliberate corruption of selected backward rules.
//!
//! Used only as a negative control for the gradient-check harness: with a
//! fault armed, the named operation scales its input gradients by 1.5, which
//! any finite-difference comparison must flag.

use std::cell::Cell;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultOp {
    Gelu,
    Softmax,
    Matmul,
    ConvTranspose2d,
}

impl FromStr for FaultOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gelu" => Ok(FaultOp::Gelu),
            "softmax" => Ok(FaultOp::Softmax),
            "matmul" => Ok(FaultOp::Matmul),
            "conv_transpose2d" => Ok(FaultOp::ConvTranspose2d),
            other => Err(format!(
                "unknown fault op {other:?} (expected gelu, softmax, matmul or conv_transpose2d)"
            )),
        }
    }
}

thread_local! {
    static ARMED: Cell<Option<FaultOp>> = const { Cell::new(None) };
}

/// Arms (or with `None`, disarms) a fault on the current thread.
pub fn arm(op: Option<FaultOp>) {
    ARMED.with(|a| a.set(op));
}

pub fn armed() -> Option<FaultOp> {
    ARMED.with(|a| a.get())
}

pub(crate) fn apply(op: FaultOp, grad: &mut [f64]) {
    if armed() == Some(op) {
        grad.iter_mut().for_each(|g| *g *= 1.5);
    }
}
