//! Tensor expressions with reverse-mode gradients.

mod conv;
mod graph;

pub use graph::{Graph, Var};

use crate::error::Result;
use crate::tensor::Tensor;

/// Zero-padded "same" true convolution of `x` with `w` outside any graph.
/// Layout rules are those of [`Graph::conv1d`].
pub fn conv1d_same(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv1d(xv, wv)?;
    Ok(g.value(y).clone())
}

/// Two-dimensional counterpart of [`conv1d_same`]; see [`Graph::conv2d`].
pub fn conv2d_same(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv2d(xv, wv)?;
    Ok(g.value(y).clone())
}

