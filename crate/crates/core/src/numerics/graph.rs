//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] records every value produced during a forward pass. Nodes are
//! appended in evaluation order, so a single reverse sweep over node indices
//! visits every consumer before its inputs and accumulates gradients in a
//! fixed order (bitwise reproducible).

use crate::error::{invalid, shape_err, Error, Result};
use crate::pyramid::{self, GaussianKernel};

use super::conv::{self, ConvDims};
use super::resample::{apply_separable, apply_separable_adjoint, LinearMap1d};
use super::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var> },
    Conv1d { x: Var, w: Var, b: Option<Var> },
    GlobalAvgPool(Var),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    ChannelMul { x: Var, weights: Var },
    AddScalar(Var, T),
    BilinearUp2(Var),
    LaplacianUp(Var, GaussianKernel),
    L1Loss(Var, Var),
    MseLoss(Var, Var),
    Dot(Var, Var),
    Clamp,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv1d { .. } => "conv1d",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(_) => "concat",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::ChannelMul { .. } => "channel_mul",
            Op::AddScalar(..) => "add_scalar",
            Op::BilinearUp2(_) => "bilinear_upsample_x2",
            Op::LaplacianUp(..) => "laplacian_upscale",
            Op::L1Loss(..) => "l1_loss",
            Op::MseLoss(..) => "mse_loss",
            Op::Dot(..) => "dot",
            Op::Clamp => "clamp",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that requires them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err!("{what}: {:?} vs {:?}", sa, sb));
        }
        Ok(())
    }

    /// Same-size 2D cross-correlation. `w` is `[C_out, C_in, kh, kw]` with odd
    /// kernel extents, `b` (if any) is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let d = self.conv_dims(x, w, b)?;
        let value = {
            let bias = b.map(|b| self.value(b).data());
            conv::conv2d_forward(self.value(x).data(), self.value(w).data(), bias, &d)
        };
        let value = Tensor::new(vec![d.cout, d.h, d.w], value)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(value, Op::Conv2d { x, w, b }, &inputs))
    }

    fn conv_dims(&self, x: Var, w: Var, b: Option<Var>) -> Result<ConvDims> {
        let (cin, h, wd) = self.value(x).dims3()?;
        let (cout, wcin, kh, kw) = match self.value(w).shape() {
            &[o, i, kh, kw] => (o, i, kh, kw),
            s => return Err(shape_err!("conv2d weight must be rank 4, got {:?}", s)),
        };
        if wcin != cin {
            return Err(shape_err!(
                "conv2d weight expects {wcin} input channels, input has {cin}"
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err!("conv2d kernel {kh}x{kw} must have odd extents"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err!(
                    "conv2d bias {:?} does not match {cout} output channels",
                    self.value(b).shape()
                ));
            }
        }
        Ok(ConvDims {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
        })
    }

    /// Same-length 1D cross-correlation of a vector; `w` is `[1, 1, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        if xs.shape().len() != 1 || xs.is_empty() {
            return Err(shape_err!("conv1d input must be a non-empty vector, got {:?}", xs.shape()));
        }
        match self.value(w).shape() {
            &[1, 1, k] if k % 2 == 1 => {}
            s => return Err(shape_err!("conv1d weight must be [1, 1, odd k], got {:?}", s)),
        }
        let bias = match b {
            Some(b) if self.value(b).shape() != [1] => {
                return Err(shape_err!("conv1d bias must be [1]"));
            }
            Some(b) => Some(self.value(b).data()[0]),
            None => None,
        };
        let out = conv::conv1d_forward(xs.data(), self.value(w).data(), bias);
        let value = Tensor::new(vec![out.len()], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(value, Op::Conv1d { x, w, b }, &inputs))
    }

    /// Per-channel spatial mean: `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if h == 0 || w == 0 {
            return Err(shape_err!("global_avg_pool on empty plane"));
        }
        let inv = T::of(1.0 / (h * w) as f64);
        let xs = self.value(x);
        let out: Vec<T> = (0..c)
            .map(|ch| xs.channel(ch).iter().fold(T::zero(), |s, &v| s + v) * inv)
            .collect();
        let value = Tensor::new(vec![c], out)?;
        Ok(self.derived(value, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.derived(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.derived(value, Op::Sigmoid(x), &[x])
    }

    /// Channel-axis concatenation of `[C_i, H, W]` parts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid!("concat of zero tensors"))?;
        let (_, h, w) = self.value(*first).dims3()?;
        let mut channels = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).dims3()?;
            if (ph, pw) != (h, w) {
                return Err(shape_err!("concat spatial mismatch: {h}x{w} vs {ph}x{pw}"));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![channels, h, w], data)?;
        Ok(self.derived(value, Op::Concat(parts.to_vec()), parts))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    /// Scales channel `c` of a `[C, H, W]` map by `weights[c]`. This is the
    /// only broadcasting operation.
    pub fn channel_mul(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if self.value(weights).shape() != [c] {
            return Err(shape_err!(
                "channel weights {:?} do not match {c} channels",
                self.value(weights).shape()
            ));
        }
        let plane = h * w;
        let wv = self.value(weights).data();
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wv[i / plane])
            .collect();
        let value = Tensor::new(vec![c, h, w], data)?;
        Ok(self.derived(value, Op::ChannelMul { x, weights }, &[x, weights]))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.derived(value, Op::AddScalar(x, c), &[x])
    }

    /// Factor-2 bilinear upsampling (half-pixel centers).
    pub fn bilinear_upsample_x2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if h == 0 || w == 0 {
            return Err(shape_err!("bilinear_upsample_x2 on empty plane"));
        }
        let (rows, cols) = (LinearMap1d::bilinear_x2(h), LinearMap1d::bilinear_x2(w));
        let value = per_channel(self.value(x), c, 2 * h, 2 * w, |p| {
            apply_separable(p, &rows, &cols)
        })?;
        Ok(self.derived(value, Op::BilinearUp2(x), &[x]))
    }

    /// Pyramid expansion: zero insertion followed by convolution with four
    /// times the separable Gaussian kernel.
    pub fn laplacian_upscale(&mut self, x: Var, kernel: &GaussianKernel) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if h == 0 || w == 0 {
            return Err(shape_err!("laplacian_upscale on empty plane"));
        }
        let (rows, cols) = (pyramid::expand_map(h, kernel), pyramid::expand_map(w, kernel));
        let value = per_channel(self.value(x), c, 2 * h, 2 * w, |p| {
            apply_separable(p, &rows, &cols)
        })?;
        Ok(self.derived(value, Op::LaplacianUp(x, *kernel), &[x]))
    }

    /// Mean absolute error (scalar).
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l1_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let sum = p.iter().zip(t).fold(T::zero(), |s, (&a, &b)| s + (a - b).abs());
        let value = Tensor::scalar(sum / T::of(p.len() as f64));
        Ok(self.derived(value, Op::L1Loss(pred, target), &[pred, target]))
    }

    /// Mean squared error (scalar).
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let sum = p.iter().zip(t).fold(T::zero(), |s, (&a, &b)| {
            let d = a - b;
            s + d * d
        });
        let value = Tensor::scalar(sum / T::of(p.len() as f64));
        Ok(self.derived(value, Op::MseLoss(pred, target), &[pred, target]))
    }

    /// Inner product of two same-shape tensors (scalar).
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let value = Tensor::scalar(x.iter().zip(y).fold(T::zero(), |s, (&p, &q)| s + p * q));
        Ok(self.derived(value, Op::Dot(a, b), &[a, b]))
    }

    /// Clamp to `[0, 1]`. Inference only: no backward pass is registered.
    pub fn clamp_unit(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()).min(T::one()));
        self.derived(value, Op::Clamp, &[x])
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g)))
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let d = self.conv_dims(*x, *w, *b)?;
                let need = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let cg = conv::conv2d_backward(self.value(*x).data(), self.value(*w).data(), g, &d, need);
                if let Some(gx) = cg.input {
                    accumulate(grads, *x, gx);
                }
                if let Some(gw) = cg.weight {
                    accumulate(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, cg.bias) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Conv1d { x, w, b } => {
                let (gx, gw, gb) = conv::conv1d_backward(self.value(*x).data(), self.value(*w).data(), g);
                if self.wants(*x) {
                    accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    accumulate(grads, *w, gw);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    accumulate(grads, b, vec![gb]);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let plane = h * w;
                    let inv = T::of(1.0 / plane as f64);
                    let gx = (0..c * plane).map(|i| g[i / plane] * inv).collect();
                    accumulate(grads, *x, gx);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let gx = zip_map(g, xv, |gi, xi| if xi > T::zero() { gi } else { T::zero() });
                    accumulate(grads, *x, gx);
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let gx = zip_map(g, y, |gi, yi| gi * yi * (T::one() - yi));
                    accumulate(grads, *x, gx);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        accumulate(grads, p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b).data(), |p, q| p * q));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, zip_map(g, self.value(*a).data(), |p, q| p * q));
                }
            }
            Op::ChannelMul { x, weights } => {
                let (c, h, w) = self.value(*x).dims3()?;
                let plane = h * w;
                let wv = self.value(*weights).data();
                if self.wants(*x) {
                    let gx = g.iter().enumerate().map(|(i, &gi)| gi * wv[i / plane]).collect();
                    accumulate(grads, *x, gx);
                }
                if self.wants(*weights) {
                    let xv = self.value(*x).data();
                    let gw = (0..c)
                        .map(|ch| {
                            let r = ch * plane..(ch + 1) * plane;
                            g[r.clone()]
                                .iter()
                                .zip(&xv[r])
                                .fold(T::zero(), |s, (&gi, &xi)| s + gi * xi)
                        })
                        .collect();
                    accumulate(grads, *weights, gw);
                }
            }
            Op::AddScalar(x, _) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
            }
            Op::BilinearUp2(x) => {
                if self.wants(*x) {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let (rows, cols) = (LinearMap1d::bilinear_x2(h), LinearMap1d::bilinear_x2(w));
                    let gx = per_channel_adjoint(g, c, h, w, |p| apply_separable_adjoint(p, &rows, &cols));
                    accumulate(grads, *x, gx);
                }
            }
            Op::LaplacianUp(x, kernel) => {
                if self.wants(*x) {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let (rows, cols) = (pyramid::expand_map(h, kernel), pyramid::expand_map(w, kernel));
                    let gx = per_channel_adjoint(g, c, h, w, |p| apply_separable_adjoint(p, &rows, &cols));
                    accumulate(grads, *x, gx);
                }
            }
            Op::L1Loss(p, t) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let scale = g[0] / T::of(pv.len() as f64);
                let sign = |a: T, b: T| {
                    if a > b {
                        scale
                    } else if a < b {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                if self.wants(*p) {
                    accumulate(grads, *p, zip_map(pv, tv, sign));
                }
                if self.wants(*t) {
                    accumulate(grads, *t, zip_map(tv, pv, sign));
                }
            }
            Op::MseLoss(p, t) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let scale = g[0] * T::of(2.0 / pv.len() as f64);
                if self.wants(*p) {
                    accumulate(grads, *p, zip_map(pv, tv, |a, b| scale * (a - b)));
                }
                if self.wants(*t) {
                    accumulate(grads, *t, zip_map(tv, pv, |a, b| scale * (a - b)));
                }
            }
            Op::Dot(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, self.value(*b).data().iter().map(|&v| v * g[0]).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, self.value(*a).data().iter().map(|&v| v * g[0]).collect());
                }
            }
            op @ Op::Clamp => return Err(Error::NoBackward(op.name())),
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e = *e + x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn per_channel<T: Scalar>(
    x: &Tensor<T>,
    c: usize,
    oh: usize,
    ow: usize,
    f: impl Fn(&[T]) -> Vec<T>,
) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        data.extend(f(x.channel(ch)));
    }
    Tensor::new(vec![c, oh, ow], data)
}

fn per_channel_adjoint<T: Scalar>(
    g: &[T],
    c: usize,
    h: usize,
    w: usize,
    f: impl Fn(&[T]) -> Vec<T>,
) -> Vec<T> {
    let plane = g.len() / c;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        out.extend(f(&g[ch * plane..(ch + 1) * plane]));
    }
    out
}
