use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::{invalid, Result, Tensor};

/// Backward rule of one recorded operation.
pub trait GradFn: Send + Sync {
    fn name(&self) -> &'static str;

    /// Inputs in the order gradients are returned.
    fn inputs(&self) -> &[Tensor];

    /// Maps the gradient of the output to one gradient per input. Inputs that
    /// do not require gradients may be answered with `None`.
    fn backward(&self, output: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording lineage on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Post-order over the differentiable part of the graph rooted at `root`.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.ptr_id());
    while let Some((node, next)) = stack.pop() {
        let inputs = node.grad_fn().map(|g| g.inputs()).unwrap_or(&[]);
        if next < inputs.len() {
            let child = inputs[next].clone();
            stack.push((node, next + 1));
            if child.requires_grad() && visited.insert(child.ptr_id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

pub(super) fn backward(root: &Tensor) -> Result<()> {
    if root.numel() != 1 {
        return Err(invalid(
            "backward",
            format!("loss must be a single element, got shape {:?}", root.shape()),
        ));
    }
    if !root.requires_grad() {
        return Ok(());
    }
    let order = topo_order(root);
    let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
    pending.insert(root.ptr_id(), vec![1.0]);
    for node in order.iter().rev() {
        let Some(grad) = pending.remove(&node.ptr_id()) else {
            continue;
        };
        match node.grad_fn() {
            None => node.accumulate_grad(&grad),
            Some(f) => {
                let input_grads = f.backward(node.data(), &grad);
                for (input, g) in f.inputs().iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(g.len(), input.numel(), "{} backward", f.name());
                    match pending.get_mut(&input.ptr_id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.ptr_id(), g);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
