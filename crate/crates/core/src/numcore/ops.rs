//! Gradient-free tensor operations. Each one runs the same code path as the
//! corresponding [`Graph`] operation on a throwaway inference graph.

use super::{Graph, Tensor};
use crate::error::Result;

fn unary(x: &Tensor, f: impl FnOnce(&mut Graph, super::Var) -> Result<super::Var>) -> Result<Tensor> {
    let mut g = Graph::inference();
    let v = g.constant(x.clone());
    let y = f(&mut g, v)?;
    Ok(g.value(y).clone())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let y = g.matmul(va, vb)?;
    Ok(g.value(y).clone())
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    unary(x, |g, v| g.softmax(v, axis))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    unary(x, |g, v| Ok(g.relu(v)))
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mut g = Graph::inference();
    let v = g.constant(x.clone());
    let (gm, bt) = (g.constant(gamma.clone()), g.constant(beta.clone()));
    let y = g.layer_norm(v, gm, bt, eps)?;
    Ok(g.value(y).clone())
}

pub fn conv2d(x: &Tensor, kernels: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let mut g = Graph::inference();
    let (v, w, b) = (g.constant(x.clone()), g.constant(kernels.clone()), g.constant(bias.clone()));
    let y = g.conv2d(v, w, b, stride, pad)?;
    Ok(g.value(y).clone())
}

pub fn causal_conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let (v, w, b) = (g.constant(x.clone()), g.constant(kernel.clone()), g.constant(bias.clone()));
    let y = g.causal_conv1d(v, w, b)?;
    Ok(g.value(y).clone())
}

pub fn max_pool2d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    unary(x, |g, v| g.max_pool2d(v, window, stride))
}
