use super::{Scalar, Tensor};

/// "Same" 2D convolution parameters. `P` is [`Tensor`] for stored weights and
/// [`Var`](super::Var) once registered in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<P> {
    /// `[C_out, C_in, kh, kw]`
    pub weight: P,
    /// `[C_out]`
    pub bias: P,
}

/// 1D convolution across a pooled channel vector (bias optional).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<P> {
    /// `[1, 1, k]`
    pub weight: P,
    pub bias: Option<P>,
}

pub type Conv2dLayer<T> = Conv2d<Tensor<T>>;
pub type Conv1dLayer<T> = Conv1d<Tensor<T>>;

impl<T: Scalar> Conv2dLayer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kh: usize, kw: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel extents must be odd");
        Self {
            weight: Tensor::zeros(&[out_ch, in_ch, kh, kw]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Zero padding that keeps the spatial size.
    pub fn padding(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        ((kh - 1) / 2, (kw - 1) / 2)
    }

    pub fn fan_in(&self) -> usize {
        let (kh, kw) = self.kernel();
        self.in_channels() * kh * kw
    }
}

impl<T: Scalar> Conv1dLayer<T> {
    pub fn zeros(k: usize, with_bias: bool) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Self {
            weight: Tensor::zeros(&[1, 1, k]),
            bias: with_bias.then(|| Tensor::zeros(&[1])),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size() - 1) / 2
    }
}
