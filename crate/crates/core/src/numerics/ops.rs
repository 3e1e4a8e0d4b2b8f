//! Eager (gradient-free) entry points for the differentiable operations.
//! Each call evaluates a one-node [`Graph`]; use the graph directly when
//! gradients are needed.

use crate::error::{shape_err, Result};
use crate::pyramid::GaussianKernel;

use super::{Conv1dLayer, Conv2dLayer, Graph, Scalar, Tensor, Var};

fn unary<T: Scalar>(
    input: &Tensor<T>,
    f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = f(&mut g, x)?;
    Ok(g.value(y).clone())
}

pub fn conv2d<T: Scalar>(input: &Tensor<T>, layer: &Conv2dLayer<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let w = g.constant(layer.weight.clone());
    let b = g.constant(layer.bias.clone());
    let y = g.conv2d(x, w, Some(b))?;
    Ok(g.value(y).clone())
}

pub fn conv1d<T: Scalar>(input: &Tensor<T>, layer: &Conv1dLayer<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let w = g.constant(layer.weight.clone());
    let b = layer.bias.as_ref().map(|b| g.constant(b.clone()));
    let y = g.conv1d(x, w, b)?;
    Ok(g.value(y).clone())
}

pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    unary(input, |g, x| g.global_avg_pool(x))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = parts.iter().map(|p| g.constant((*p).clone())).collect();
    let y = g.concat(&vars)?;
    Ok(g.value(y).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
}

/// Element-wise add or multiply of equal shapes. A `[C]` right operand
/// against a `[C, H, W]` left operand multiplies channel-wise; no other
/// broadcast is accepted.
pub fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, kind: ElementwiseKind) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = match kind {
        ElementwiseKind::Add => g.add(x, y)?,
        ElementwiseKind::Mul if a.shape() == b.shape() => g.mul(x, y)?,
        ElementwiseKind::Mul if a.shape().len() == 3 && b.shape() == [a.shape()[0]] => {
            g.channel_mul(x, y)?
        }
        ElementwiseKind::Mul => return Err(shape_err!("mul: {:?} vs {:?}", a.shape(), b.shape())),
    };
    Ok(g.value(out).clone())
}

pub fn bilinear_upsample_x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    unary(input, |g, x| g.bilinear_upsample_x2(x))
}

pub fn laplacian_upscale<T: Scalar>(input: &Tensor<T>, kernel: &GaussianKernel) -> Result<Tensor<T>> {
    unary(input, |g, x| g.laplacian_upscale(x, kernel))
}

pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(target.clone()));
    let l = g.l1_loss(p, t)?;
    Ok(g.value(l).data()[0])
}
