//! Full-reference quality metrics: per-band PSNR and its mean, mean SSIM,
//! and the spectral angle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::hsidata::{Band, HsiCube};
use crate::numerics::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// `10 log10(peak^2 / MSE)`, accumulated in `f64`. Identical inputs give
/// `+inf`.
pub fn psnr<T: Scalar>(reference: &Band<T>, test: &Band<T>, peak: f64) -> Result<f64> {
    if reference.dims() != test.dims() {
        return Err(shape_err!("psnr: {:?} vs {:?}", reference.dims(), test.dims()));
    }
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR of every band (peak 1).
pub fn band_psnr_curve(reference: &HsiCube, test: &HsiCube) -> Result<Vec<f64>> {
    reference.same_shape(test)?;
    (0..reference.bands())
        .into_par_iter()
        .map(|b| psnr(&reference.band(b), &test.band(b), 1.0))
        .collect()
}

/// Arithmetic mean of the per-band PSNR values.
pub fn mpsnr(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    Ok(mean(&band_psnr_curve(reference, test)?))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Normalized 1D Gaussian; the 2D window is its outer product.
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering: output is `(h - 10) x (w - 10)`.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|k| win[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean of the local SSIM map (11x11 Gaussian window, sigma 1.5, dynamic
/// range 1), over valid window positions only.
pub fn ssim<T: Scalar>(reference: &Band<T>, test: &Band<T>) -> Result<f64> {
    if reference.dims() != test.dims() {
        return Err(shape_err!("ssim: {:?} vs {:?}", reference.dims(), test.dims()));
    }
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"));
    }
    let win = gaussian_window();
    let x: Vec<f64> = reference.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = test.data().iter().map(|v| v.as_f64()).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, h, w, &win);
    let mu_y = filter_valid(&y, h, w, &win);
    let xx = filter_valid(&prod(&x, &x), h, w, &win);
    let yy = filter_valid(&prod(&y, &y), h, w, &win);
    let xy = filter_valid(&prod(&x, &y), h, w, &win);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = xx[i] - mx * mx;
            let syy = yy[i] - my * my;
            let sxy = xy[i] - mx * my;
            ((2.0 * mx * my + C1) * (2.0 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Mean over bands of [`ssim`].
pub fn mssim(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    reference.same_shape(test)?;
    let per_band = (0..reference.bands())
        .into_par_iter()
        .map(|b| ssim(&reference.band(b), &test.band(b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&per_band))
}

/// Mean spectral angle and the number of pixels left out because either
/// spectrum has zero norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamSummary {
    pub degrees: f64,
    pub skipped: usize,
}

/// Angle between two vectors in radians, `2 atan2(|u - v|, |u + v|)` on the
/// unit vectors. Accurate near 0 and 180 degrees where `acos` is not.
/// `None` if either vector is zero.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        let (u, v) = (p / na, q / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

pub fn sam_summary(reference: &HsiCube, test: &HsiCube) -> Result<SamSummary> {
    reference.same_shape(test)?;
    if reference.bands() < 2 {
        return Err(invalid!("spectral angle needs at least 2 bands"));
    }
    let (h, w, _) = reference.dims();
    let rows: Vec<(f64, usize, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let (mut sum, mut counted, mut skipped) = (0.0, 0, 0);
            for x in 0..w {
                let r: Vec<f64> = reference.spectrum(y, x).into_iter().map(f64::from).collect();
                let t: Vec<f64> = test.spectrum(y, x).into_iter().map(f64::from).collect();
                match spectral_angle(&r, &t) {
                    Some(a) => {
                        sum += a;
                        counted += 1;
                    }
                    None => skipped += 1,
                }
            }
            (sum, counted, skipped)
        })
        .collect();
    let (sum, counted, skipped) = rows
        .into_iter()
        .fold((0.0, 0, 0), |(s, c, k), (rs, rc, rk)| (s + rs, c + rc, k + rk));
    if counted == 0 {
        return Err(invalid!("every pixel has a zero-norm spectrum"));
    }
    Ok(SamSummary {
        degrees: (sum / counted as f64).to_degrees(),
        skipped,
    })
}

/// Mean spectral angle in degrees.
pub fn sam(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    Ok(sam_summary(reference, test)?.degrees)
}

/// Serialized with infinite values written as the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "inf_float")]
    pub mpsnr: f64,
    pub mssim: f64,
    pub sam_deg: f64,
    #[serde(with = "inf_float_vec")]
    pub band_psnr: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(reference: &HsiCube, test: &HsiCube) -> Result<Self> {
        let band_psnr = band_psnr_curve(reference, test)?;
        Ok(Self {
            mpsnr: mean(&band_psnr),
            mssim: mssim(reference, test)?,
            sam_deg: sam(reference, test)?,
            band_psnr,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// `band,psnr` CSV with one row per band.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("band,psnr\n");
    for (b, v) in curve.iter().enumerate() {
        s.push_str(&format!("{b},{}\n", format_db(*v)));
    }
    s
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaybeInf {
    Num(f64),
    Text(String),
}

impl MaybeInf {
    fn wrap(v: f64) -> Self {
        if v == f64::INFINITY {
            MaybeInf::Text("inf".into())
        } else {
            MaybeInf::Num(v)
        }
    }

    fn unwrap<E: serde::de::Error>(self) -> std::result::Result<f64, E> {
        match self {
            MaybeInf::Num(v) => Ok(v),
            MaybeInf::Text(s) if s == "inf" => Ok(f64::INFINITY),
            MaybeInf::Text(s) => Err(E::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

mod inf_float {
    use super::MaybeInf;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        MaybeInf::wrap(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        MaybeInf::deserialize(d)?.unwrap()
    }
}

mod inf_float_vec {
    use super::MaybeInf;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&x| MaybeInf::wrap(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<MaybeInf>::deserialize(d)?.into_iter().map(MaybeInf::unwrap).collect()
    }
}

#[cfg(test)]
mod tests;
