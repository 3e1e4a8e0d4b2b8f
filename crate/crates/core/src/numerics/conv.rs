//! im2col-based "same" convolutions (cross-correlation, stride 1, zero
//! padding) and their adjoints.

use super::scalar::{gemm, Layout};
use super::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn n(&self) -> usize {
        self.h * self.w
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Column range `[lo, hi)` of output positions whose tap `k` lands inside
/// `[0, len)` when the kernel has half-width `pad`.
fn valid_range(len: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).min(len);
    let hi = (len + pad).saturating_sub(k).min(len);
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims) -> Vec<T> {
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let n = d.n();
    let mut cols = vec![T::zero(); d.k() * n];
    for ci in 0..d.cin {
        let plane = &x[ci * n..(ci + 1) * n];
        for ky in 0..d.kh {
            let (y0, y1) = valid_range(d.h, ky, ph);
            for kx in 0..d.kw {
                let (x0, x1) = valid_range(d.w, kx, pw);
                if x0 == x1 {
                    continue;
                }
                let row = (ci * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for y in y0..y1 {
                    let sy = y + ky - ph;
                    let src = &plane[sy * d.w..(sy + 1) * d.w];
                    dst[y * d.w + x0..y * d.w + x1]
                        .copy_from_slice(&src[x0 + kx - pw..x1 + kx - pw]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], d: &ConvDims, gx: &mut [T]) {
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let n = d.n();
    for ci in 0..d.cin {
        let plane = &mut gx[ci * n..(ci + 1) * n];
        for ky in 0..d.kh {
            let (y0, y1) = valid_range(d.h, ky, ph);
            for kx in 0..d.kw {
                let (x0, x1) = valid_range(d.w, kx, pw);
                if x0 == x1 {
                    continue;
                }
                let row = (ci * d.kh + ky) * d.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for y in y0..y1 {
                    let sy = y + ky - ph;
                    let dst = &mut plane[sy * d.w + x0 + kx - pw..sy * d.w + x1 + kx - pw];
                    for (o, &g) in dst.iter_mut().zip(&src[y * d.w + x0..y * d.w + x1]) {
                        *o = *o + g;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
) -> Vec<T> {
    let n = d.n();
    let mut out = vec![T::zero(); d.cout * n];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(n).zip(b) {
            row.fill(bv);
        }
    }
    let owned;
    let cols: &[T] = if d.pointwise() {
        x
    } else {
        owned = im2col(x, d);
        &owned
    };
    gemm(d.cout, d.k(), n, weight, Layout::N, cols, Layout::N, T::one(), &mut out);
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    d: &ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let n = d.n();
    let k = d.k();
    let (need_x, need_w, need_b) = need;

    let bias = need_b.then(|| {
        gout.chunks_exact(n)
            .map(|row| row.iter().fold(T::zero(), |s, &g| s + g))
            .collect()
    });

    let weight_grad = need_w.then(|| {
        let owned;
        let cols: &[T] = if d.pointwise() {
            x
        } else {
            owned = im2col(x, d);
            &owned
        };
        let mut gw = vec![T::zero(); d.cout * k];
        // gW (cout x k) = gout (cout x n) * cols^T (n x k)
        gemm(d.cout, n, k, gout, Layout::N, cols, Layout::T, T::zero(), &mut gw);
        gw
    });

    let input = need_x.then(|| {
        // gcols (k x n) = W^T (k x cout) * gout (cout x n)
        let mut gcols = vec![T::zero(); k * n];
        gemm(k, d.cout, n, weight, Layout::T, gout, Layout::N, T::zero(), &mut gcols);
        if d.pointwise() {
            gcols
        } else {
            let mut gx = vec![T::zero(); d.cin * n];
            col2im_add(&gcols, d, &mut gx);
            gx
        }
    });

    ConvGrads {
        input,
        weight: weight_grad,
        bias,
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<T>) -> Vec<T> {
    let pad = weight.len() / 2;
    let len = x.len();
    (0..len)
        .map(|i| {
            let mut acc = bias.unwrap_or_else(T::zero);
            for (j, &wv) in weight.iter().enumerate() {
                let src = i + j;
                if src >= pad && src - pad < len {
                    acc = acc + wv * x[src - pad];
                }
            }
            acc
        })
        .collect()
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub(crate) fn conv1d_backward<T: Scalar>(x: &[T], weight: &[T], gout: &[T]) -> (Vec<T>, Vec<T>, T) {
    let pad = weight.len() / 2;
    let len = x.len();
    let mut gx = vec![T::zero(); len];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = T::zero();
    for (i, &g) in gout.iter().enumerate() {
        gb = gb + g;
        for (j, &wv) in weight.iter().enumerate() {
            let src = i + j;
            if src >= pad && src - pad < len {
                gx[src - pad] = gx[src - pad] + g * wv;
                gw[j] = gw[j] + g * x[src - pad];
            }
        }
    }
    (gx, gw, gb)
}
