//! Classical per-band enhancement: histogram equalization, CLAHE,
//! multi-scale Retinex and McCann's multiresolution Retinex. Every method
//! treats each band as an independent grayscale image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hsidata::{Band, HsiCube};
use crate::numerics::resample::{apply_separable, merge, reflect101, LinearMap1d};

pub const BINS: usize = 256;
/// Offset inside logarithms.
pub const LOG_EPS: f64 = 1e-4;
pub const MSR_SCALES: [f64; 3] = [15.0, 80.0, 360.0];
pub const MCCANN_ITERATIONS: usize = 3;

fn level(v: f32) -> usize {
    (f64::from(v).clamp(0.0, 1.0) * (BINS - 1) as f64).round() as usize
}

fn histogram(values: impl Iterator<Item = f32>) -> [f64; BINS] {
    let mut h = [0.0; BINS];
    for v in values {
        h[level(v)] += 1.0;
    }
    h
}

/// Cumulative distribution `cdf[l] = mass(<= l) / total`.
fn cdf(hist: &[f64; BINS]) -> [f64; BINS] {
    let total: f64 = hist.iter().sum();
    let mut acc = 0.0;
    let mut out = [0.0; BINS];
    for (o, &h) in out.iter_mut().zip(hist) {
        acc += h;
        *o = acc / total;
    }
    out
}

/// Global histogram equalization: each pixel maps to the CDF of its
/// 256-level quantization. A constant band maps to 1.
pub fn hist_equalize(band: &Band<f32>) -> Band<f32> {
    let map = cdf(&histogram(band.data().iter().copied()));
    band.map(|v| map[level(v)] as f32)
}

/// Clips every bin at `ceiling` and returns the clipped histogram with the
/// total excess mass.
pub fn clip_histogram(hist: &[f64; BINS], ceiling: f64) -> ([f64; BINS], f64) {
    let mut excess = 0.0;
    let clipped = hist.map(|h| {
        if h > ceiling {
            excess += h - ceiling;
            ceiling
        } else {
            h
        }
    });
    (clipped, excess)
}

/// Bin ceiling for a tile of `pixels`: `clip` is a fraction of the tile, at
/// least one pixel. An infinite `clip` disables clipping.
pub fn clip_ceiling(clip: f64, pixels: usize) -> f64 {
    (clip * pixels as f64).max(1.0)
}

fn tile_bounds(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles).map(|t| (t * len / tiles, (t + 1) * len / tiles)).collect()
}

/// Neighbouring tile indices and the weight of the second one for a pixel
/// position, given tile centers. Outside the first/last center a single
/// tile applies.
fn axis_weights(pos: f64, centers: &[f64]) -> (usize, usize, f64) {
    if pos <= centers[0] {
        return (0, 0, 0.0);
    }
    let last = centers.len() - 1;
    if pos >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.iter().rposition(|&c| c <= pos).expect("pos above first center");
    (i, i + 1, (pos - centers[i]) / (centers[i + 1] - centers[i]))
}

fn lerp(a: f64, b: f64, t: f64, same: bool) -> f64 {
    if same {
        a
    } else {
        a + t * (b - a)
    }
}

/// Per-tile transfer functions of a CLAHE pass.
struct ClaheMaps {
    tiles: usize,
    maps: Vec<[f64; BINS]>,
    centers_y: Vec<f64>,
    centers_x: Vec<f64>,
}

impl ClaheMaps {
    fn build(band: &Band<f32>, tiles: usize, clip: f64) -> Result<Self> {
        let (h, w) = band.dims();
        if tiles == 0 {
            return Err(invalid!("clahe needs at least one tile"));
        }
        if h < tiles || w < tiles {
            return Err(invalid!("{h}x{w} band is smaller than the {tiles}x{tiles} tile grid"));
        }
        if clip.is_nan() || clip <= 0.0 {
            return Err(invalid!("clip limit must be positive, got {clip}"));
        }
        let (rows, cols) = (tile_bounds(h, tiles), tile_bounds(w, tiles));
        let mut maps = Vec::with_capacity(tiles * tiles);
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let pixels = (y1 - y0) * (x1 - x0);
                let hist = histogram((y0..y1).flat_map(|y| (x0..x1).map(move |x| band.get(y, x))));
                let (mut clipped, excess) = clip_histogram(&hist, clip_ceiling(clip, pixels));
                let share = excess / BINS as f64;
                for b in clipped.iter_mut() {
                    *b += share;
                }
                maps.push(cdf(&clipped));
            }
        }
        let center = |&(a, b): &(usize, usize)| (a + b - 1) as f64 / 2.0;
        Ok(Self {
            tiles,
            maps,
            centers_y: rows.iter().map(center).collect(),
            centers_x: cols.iter().map(center).collect(),
        })
    }

    /// Blended transfer value of quantized level `l` at pixel `(y, x)`.
    fn transfer(&self, y: usize, x: usize, l: usize) -> f64 {
        let (ty0, ty1, fy) = axis_weights(y as f64, &self.centers_y);
        let (tx0, tx1, fx) = axis_weights(x as f64, &self.centers_x);
        let at = |ty: usize, tx: usize| self.maps[ty * self.tiles + tx][l];
        let top = lerp(at(ty0, tx0), at(ty0, tx1), fx, tx0 == tx1);
        let bottom = lerp(at(ty1, tx0), at(ty1, tx1), fx, tx0 == tx1);
        lerp(top, bottom, fy, ty0 == ty1)
    }
}

/// Contrast-limited adaptive histogram equalization on a `tiles x tiles`
/// grid: per-tile clipped histograms with the excess spread evenly over all
/// bins, and bilinear blending of the four nearest tile mappings.
pub fn clahe(band: &Band<f32>, tiles: usize, clip: f64) -> Result<Band<f32>> {
    let maps = ClaheMaps::build(band, tiles, clip)?;
    let (h, w) = band.dims();
    Ok(Band::from_fn(h, w, |y, x| maps.transfer(y, x, level(band.get(y, x))) as f32))
}

/// Normalized Gaussian blur along one axis with mirrored boundaries. Kernels
/// wider than the signal fold back onto it repeatedly.
fn gaussian_map(n: usize, sigma: f64) -> LinearMap1d {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let taps = (0..n)
        .map(|i| {
            merge(
                (-radius..=radius)
                    .zip(&weights)
                    .map(|(t, &wt)| (reflect101(i as isize + t, n), wt / total))
                    .collect(),
            )
        })
        .collect();
    LinearMap1d { in_len: n, taps }
}

/// Equal-weight mean over scales of `log(x + eps) - log(G_sigma * x + eps)`.
pub fn msr_log_ratio(band: &Band<f32>, scales: &[f64]) -> Result<Band<f64>> {
    if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(invalid!("retinex scales must be positive, got {scales:?}"));
    }
    let (h, w) = band.dims();
    let x: Vec<f64> = band.data().iter().map(|&v| f64::from(v)).collect();
    let mut acc = vec![0.0; h * w];
    for &sigma in scales {
        let blurred = apply_separable(&x, &gaussian_map(h, sigma), &gaussian_map(w, sigma));
        for ((a, &v), &b) in acc.iter_mut().zip(&x).zip(&blurred) {
            *a += (v + LOG_EPS).ln() - (b + LOG_EPS).ln();
        }
    }
    let n = scales.len() as f64;
    Band::new(h, w, acc.into_iter().map(|v| v / n).collect())
}

/// Nearest-rank percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[(q * (sorted.len() - 1) as f64).round() as usize]
}

/// Maps the 1st..99th percentile range linearly onto `[0, 1]`, clamping
/// outside it. A degenerate range maps everything to 0.
pub fn percentile_stretch(values: &Band<f64>) -> Band<f32> {
    let mut sorted = values.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 0.01), percentile(&sorted, 0.99));
    if hi - lo <= 1e-12 {
        return Band::filled(values.height(), values.width(), 0.0);
    }
    let (h, w) = values.dims();
    Band::from_fn(h, w, |y, x| ((values.get(y, x) - lo) / (hi - lo)).clamp(0.0, 1.0) as f32)
}

/// Multi-scale Retinex followed by a percentile stretch.
pub fn msr(band: &Band<f32>, scales: &[f64]) -> Result<Band<f32>> {
    Ok(percentile_stretch(&msr_log_ratio(band, scales)?))
}

/// 2x2 block average; odd trailing rows/columns average what exists.
fn halve(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let (mut s, mut n) = (0.0, 0.0);
            for yy in 2 * y..(2 * y + 2).min(h) {
                for xx in 2 * x..(2 * x + 2).min(w) {
                    s += src[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * ow + x] = s / n;
        }
    }
    (out, oh, ow)
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// One ratio-product-reset-average sweep toward a neighbour offset. Pixels
/// whose neighbour falls outside the image keep their estimate.
fn compare_with_neighbour(op: &mut [f64], ip: &[f64], h: usize, w: usize, (dy, dx): (isize, isize), max: f64) {
    let old = op.to_vec();
    for y in 0..h {
        let ny = y as isize + dy;
        if ny < 0 || ny >= h as isize {
            continue;
        }
        for x in 0..w {
            let nx = x as isize + dx;
            if nx < 0 || nx >= w as isize {
                continue;
            }
            let (i, j) = (y * w + x, ny as usize * w + nx as usize);
            let np = (old[j] + ip[i] - ip[j]).min(max);
            op[i] = (old[i] + np) / 2.0;
        }
    }
}

/// McCann99 multiresolution Retinex in the log domain: the coarsest level
/// starts at the band maximum; each level runs `iterations` rounds over the
/// eight neighbour directions, and the estimate is carried to the next finer
/// level by pixel replication. Output is `exp(estimate - max)` in `(0, 1]`.
pub fn mccann_retinex(band: &Band<f32>, iterations: usize) -> Result<Band<f32>> {
    if band.data().iter().all(|&v| v <= 0.0) {
        return Err(invalid!("McCann retinex needs a band with positive values"));
    }
    let (h, w) = band.dims();
    let log: Vec<f64> = band.data().iter().map(|&v| (f64::from(v).max(0.0) + LOG_EPS).ln()).collect();
    let max = log.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut levels = vec![(log, h, w)];
    while {
        let (_, lh, lw) = levels.last().expect("non-empty");
        *lh > 1 || *lw > 1
    } {
        let (d, lh, lw) = levels.last().expect("non-empty");
        let next = halve(d, *lh, *lw);
        levels.push(next);
    }

    let (_, ch, cw) = levels.last().expect("non-empty");
    let mut op = vec![max; ch * cw];
    let mut dims = (*ch, *cw);
    for (ip, lh, lw) in levels.iter().rev() {
        if (*lh, *lw) != dims {
            let (ph, pw) = dims;
            op = (0..lh * lw)
                .map(|i| op[((i / lw) / 2).min(ph - 1) * pw + ((i % lw) / 2).min(pw - 1)])
                .collect();
            dims = (*lh, *lw);
        }
        for _ in 0..iterations {
            for &d in &NEIGHBOURS {
                compare_with_neighbour(&mut op, ip, *lh, *lw, d, max);
            }
        }
    }
    Band::new(h, w, op.into_iter().map(|v| (v - max).exp() as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Baseline {
    He,
    Clahe { tiles: usize, clip: f64 },
    Msr { scales: Vec<f64> },
    Mr { iterations: usize },
}

impl Baseline {
    pub fn clahe_default() -> Self {
        Baseline::Clahe { tiles: 8, clip: 0.01 }
    }

    pub fn msr_default() -> Self {
        Baseline::Msr { scales: MSR_SCALES.to_vec() }
    }

    pub fn mr_default() -> Self {
        Baseline::Mr {
            iterations: MCCANN_ITERATIONS,
        }
    }

    pub fn apply_band(&self, band: &Band<f32>) -> Result<Band<f32>> {
        match self {
            Baseline::He => Ok(hist_equalize(band)),
            Baseline::Clahe { tiles, clip } => clahe(band, *tiles, *clip),
            Baseline::Msr { scales } => msr(band, scales),
            Baseline::Mr { iterations } => mccann_retinex(band, *iterations),
        }
    }

    /// Band-parallel, order-preserving.
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        let bands = (0..cube.bands())
            .into_par_iter()
            .map(|b| self.apply_band(&cube.band(b)))
            .collect::<Result<Vec<_>>>()?;
        HsiCube::from_bands(&bands)
    }
}
