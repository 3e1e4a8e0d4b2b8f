//! Single-level Laplacian pyramid with exact reconstruction.
//!
//! `decompose` blurs with a separable 5-tap binomial kernel (mirror boundary,
//! no edge repeat) and keeps even-index samples to form the half-resolution
//! base. The detail layer is the residual against the expansion of that base,
//! so `reconstruct` (detail + expansion) returns the input up to round-off.
//!
//! Expansion inserts zeros between samples and convolves with four times the
//! 2D kernel (twice the 1D kernel per axis). Boundary samples of the
//! zero-inserted signal are mirrored the same way as in the blur, which keeps
//! constant fields constant all the way to the border.

use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result};
use crate::hsidata::{Band, HsiCube};
use crate::numerics::resample::{apply_separable, merge, reflect101, LinearMap1d};
use crate::numerics::Scalar;

/// Symmetric 5-tap smoothing kernel, applied separably.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    taps: [f64; 5],
}

impl Default for GaussianKernel {
    fn default() -> Self {
        Self::binomial()
    }
}

impl GaussianKernel {
    /// `[1, 4, 6, 4, 1] / 16`
    pub fn binomial() -> Self {
        Self {
            taps: [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0],
        }
    }

    /// Arbitrary taps; no validation (see [`GaussianKernel::check`]).
    pub fn from_taps(taps: [f64; 5]) -> Self {
        Self { taps }
    }

    pub fn taps(&self) -> [f64; 5] {
        self.taps
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Sums of the even-offset taps `{-2, 0, 2}` and odd-offset taps `{-1, 1}`.
    pub fn phase_sums(&self) -> (f64, f64) {
        let t = self.taps;
        (t[0] + t[2] + t[4], t[1] + t[3])
    }

    /// Largest violation of the kernel invariants: unit sum, symmetry and
    /// per-phase sums of one half.
    pub fn invariant_error(&self) -> f64 {
        let t = self.taps;
        let (even, odd) = self.phase_sums();
        [
            (self.sum() - 1.0).abs(),
            (t[0] - t[4]).abs(),
            (t[1] - t[3]).abs(),
            (even - 0.5).abs(),
            (odd - 0.5).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn check(&self) -> Result<()> {
        let err = self.invariant_error();
        if err > 1e-12 {
            return Err(invalid!("pyramid kernel {:?} violates its invariants by {err:e}", self.taps));
        }
        Ok(())
    }
}

/// Blur then keep even samples: `n -> n / 2`.
pub(crate) fn reduce_map(n: usize, kernel: &GaussianKernel) -> LinearMap1d {
    let taps = (0..n / 2)
        .map(|i| {
            merge(
                (-2isize..=2)
                    .map(|t| (reflect101(2 * i as isize + t, n), kernel.taps[(t + 2) as usize]))
                    .collect(),
            )
        })
        .collect();
    LinearMap1d { in_len: n, taps }
}

/// Zero insertion then convolution with `2 * kernel`: `n -> 2n`.
pub(crate) fn expand_map(n: usize, kernel: &GaussianKernel) -> LinearMap1d {
    let full = 2 * n;
    let taps = (0..full)
        .map(|p| {
            merge(
                (-2isize..=2)
                    .filter_map(|t| {
                        let q = reflect101(p as isize + t, full);
                        q.is_multiple_of(2).then(|| (q / 2, 2.0 * kernel.taps[(t + 2) as usize]))
                    })
                    .collect(),
            )
        })
        .collect();
    LinearMap1d { in_len: n, taps }
}

/// High-frequency residual (full size) and low-frequency base (half size).
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidPair<T = f32> {
    pub high: Band<T>,
    pub low: Band<T>,
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(invalid!("pyramid needs even, non-zero dimensions, got {h}x{w}"));
    }
    Ok(())
}

/// Expansion of a base band to twice its size.
pub fn upscale_band<T: Scalar>(low: &Band<T>, kernel: &GaussianKernel) -> Band<T> {
    let (h, w) = low.dims();
    let data = apply_separable(low.data(), &expand_map(h, kernel), &expand_map(w, kernel));
    Band::new(2 * h, 2 * w, data).expect("expansion doubles both axes")
}

/// Blurred, decimated base of a band.
pub fn reduce_band<T: Scalar>(band: &Band<T>, kernel: &GaussianKernel) -> Result<Band<T>> {
    let (h, w) = band.dims();
    check_even(h, w)?;
    let data = apply_separable(band.data(), &reduce_map(h, kernel), &reduce_map(w, kernel));
    Band::new(h / 2, w / 2, data)
}

pub fn decompose<T: Scalar>(band: &Band<T>) -> Result<PyramidPair<T>> {
    decompose_with(band, &GaussianKernel::default())
}

pub fn decompose_with<T: Scalar>(band: &Band<T>, kernel: &GaussianKernel) -> Result<PyramidPair<T>> {
    if let Some(i) = band.data().iter().position(|v| !v.is_finite()) {
        return Err(crate::error::Error::NonFinite(format!("band element {i}")));
    }
    let low = reduce_band(band, kernel)?;
    let up = upscale_band(&low, kernel);
    let high_data = band
        .data()
        .iter()
        .zip(up.data())
        .map(|(&x, &u)| x - u)
        .collect();
    Ok(PyramidPair {
        high: Band::new(band.height(), band.width(), high_data)?,
        low,
    })
}

pub fn reconstruct<T: Scalar>(pair: &PyramidPair<T>) -> Result<Band<T>> {
    reconstruct_with(pair, &GaussianKernel::default())
}

pub fn reconstruct_with<T: Scalar>(pair: &PyramidPair<T>, kernel: &GaussianKernel) -> Result<Band<T>> {
    let (h, w) = pair.high.dims();
    if pair.low.dims() != (h / 2, w / 2) || h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!(
            "pyramid pair high {:?} does not match low {:?}",
            pair.high.dims(),
            pair.low.dims()
        ));
    }
    let up = upscale_band(&pair.low, kernel);
    let data = pair
        .high
        .data()
        .iter()
        .zip(up.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Band::new(h, w, data)
}

/// Per-band decomposition of a cube into `(C_H, C_L)`.
pub fn decompose_cube(cube: &HsiCube) -> Result<(HsiCube, HsiCube)> {
    decompose_cube_with(cube, &GaussianKernel::default())
}

pub fn decompose_cube_with(cube: &HsiCube, kernel: &GaussianKernel) -> Result<(HsiCube, HsiCube)> {
    check_even(cube.height(), cube.width())?;
    let pairs = (0..cube.bands())
        .into_par_iter()
        .map(|b| decompose_with(&cube.band(b), kernel))
        .collect::<Result<Vec<_>>>()?;
    let (high, low): (Vec<_>, Vec<_>) = pairs.into_iter().map(|p| (p.high, p.low)).unzip();
    Ok((HsiCube::from_bands(&high)?, HsiCube::from_bands(&low)?))
}

/// Average of a band's detail layer and those of its neighbours.
pub fn mean_high_frequency<T: Scalar>(i_h: &Band<T>, c_h: &[Band<T>]) -> Result<Band<T>> {
    if c_h.is_empty() {
        return Ok(i_h.clone());
    }
    let dims = i_h.dims();
    if let Some(b) = c_h.iter().find(|b| b.dims() != dims) {
        return Err(shape_err!("high-frequency band {:?} vs {:?}", b.dims(), dims));
    }
    let count = (c_h.len() + 1) as f64;
    let data = (0..i_h.data().len())
        .map(|i| {
            let s = c_h
                .iter()
                .fold(i_h.data()[i].as_f64(), |acc, b| acc + b.data()[i].as_f64());
            T::of(s / count)
        })
        .collect();
    Band::new(dims.0, dims.1, data)
}

#[cfg(test)]
mod tests;
