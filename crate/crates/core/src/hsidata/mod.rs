//! Hyperspectral cubes, bands, file I/O, preprocessing and synthetic data.

mod envi;
mod preprocess;
mod synth;

pub use envi::{read_cube, write_cube, CubePaths};
pub use preprocess::{adjacent_window, extract_patches, normalize, select_band_indices, select_bands, PatchSample};
pub use synth::{degrade, synth_scene, DegradeConfig};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{Scalar, Tensor};

/// A single spectral band (grayscale plane), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Band<T = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Band<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!(
                "band {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn cast<U: Scalar>(&self) -> Band<U> {
        Band {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Band {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `[1, H, W]` tensor view (copied).
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![1, self.height, self.width], self.data.clone()).expect("consistent band")
    }

    /// Accepts `[H, W]` or `[1, H, W]`.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [h, w] | [1, h, w] => Self::new(h, w, t.data().to_vec()),
            ref s => Err(shape_err!("expected a single-channel plane, got {:?}", s)),
        }
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Self {
        Self::from_fn(h, w, |y, x| self.get(row + y, col + x))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(shape_err!("band {:?} vs {:?}", self.dims(), other.dims()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }
}

/// A hyperspectral cube stored band-sequentially (band-major, then row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(invalid!("cube dimensions must be positive, got {height}x{width}x{bands}"));
        }
        if data.len() != height * width * bands {
            return Err(shape_err!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube element {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        Self {
            height,
            width,
            bands,
            data: vec![0.0; height * width * bands],
        }
    }

    pub fn from_bands(bands: &[Band<f32>]) -> Result<Self> {
        let first = bands.first().ok_or_else(|| invalid!("cube needs at least one band"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(h * w * bands.len());
        for (i, b) in bands.iter().enumerate() {
            if b.dims() != (h, w) {
                return Err(shape_err!("band {i} is {:?}, expected {:?}", b.dims(), (h, w)));
            }
            data.extend_from_slice(b.data());
        }
        Self::new(h, w, bands.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `(height, width, bands)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn band_slice(&self, b: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band(&self, b: usize) -> Band<f32> {
        Band {
            height: self.height,
            width: self.width,
            data: self.band_slice(b).to_vec(),
        }
    }

    pub fn band_list(&self) -> Vec<Band<f32>> {
        (0..self.bands).map(|b| self.band(b)).collect()
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    /// Spectrum of pixel `(y, x)`.
    pub fn spectrum(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.get(b, y, x)).collect()
    }

    /// Selected bands as a `[k, H, W]` tensor.
    pub fn bands_tensor<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * self.plane_len());
        for &b in indices {
            data.extend(self.band_slice(b).iter().map(|&v| T::of(f64::from(v))));
        }
        Tensor::new(vec![indices.len(), self.height, self.width], data).expect("consistent cube")
    }

    /// Spatial crop of the listed bands, in list order.
    pub fn crop(&self, indices: &[usize], row: usize, col: usize, h: usize, w: usize) -> HsiCube {
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &b in indices {
            for y in row..row + h {
                let start = (b * self.height + y) * self.width + col;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        HsiCube {
            height: h,
            width: w,
            bands: indices.len(),
            data,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn same_shape(&self, other: &HsiCube) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err!("cube {:?} vs {:?}", self.dims(), other.dims()));
        }
        Ok(())
    }
}
