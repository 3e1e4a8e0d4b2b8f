//! Synthetic paired scenes: piecewise-smooth reflectance cubes and a
//! low-light degradation model (darkening plus Gaussian, impulse and stripe
//! noise).

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Rng as Stream};

use super::HsiCube;

const MATERIALS: usize = 5;
const SHAPES: usize = 4;

/// Smooth random field `sum_j a_j cos(2 pi (fx_j x / w + fy_j y / h) + phi_j)`,
/// scaled to roughly `[-1, 1]`.
struct Field {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Field {
    fn random(rng: &mut Stream, terms: usize, max_freq: f64) -> Self {
        let waves: Vec<_> = (0..terms)
            .map(|_| {
                (
                    rng.random_range(0.3..1.0),
                    rng.random_range(-max_freq..max_freq),
                    rng.random_range(-max_freq..max_freq),
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.0).sum();
        Self {
            waves: waves.into_iter().map(|(a, fx, fy, p)| (a / norm, fx, fy, p)).collect(),
        }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(a, fx, fy, p)| a * (TAU * (fx * x + fy * y) + p).cos())
            .sum()
    }
}

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) < r * r,
        }
    }
}

/// Deterministic piecewise-smooth reflectance cube with values in
/// `[0.05, 0.95]`: smoothly varying material abundances over hard-edged
/// objects, smooth spectral signatures, shading and mild texture.
pub fn synth_scene(height: usize, width: usize, bands: usize, seed: u64) -> Result<HsiCube> {
    if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(invalid!("scene dimensions must be even and non-zero, got {height}x{width}"));
    }
    if bands < 2 {
        return Err(invalid!("scene needs at least 2 bands, got {bands}"));
    }
    let mut rng = stream(seed, "scene", 0);

    // Spectral signatures: baseline plus a few broad Gaussian bumps.
    let signatures: Vec<Vec<f64>> = (0..MATERIALS)
        .map(|_| {
            let base = rng.random_range(0.2..0.7);
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(-0.25..0.35),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.1..0.35),
                    )
                })
                .collect();
            (0..bands)
                .map(|b| {
                    let l = b as f64 / (bands - 1) as f64;
                    let v = base
                        + bumps
                            .iter()
                            .map(|&(a, c, s)| a * (-(l - c).powi(2) / (2.0 * s * s)).exp())
                            .sum::<f64>();
                    v.clamp(0.08, 0.92)
                })
                .collect()
        })
        .collect();

    let abundance: Vec<Field> = (0..MATERIALS).map(|_| Field::random(&mut rng, 4, 2.5)).collect();
    let shading = Field::random(&mut rng, 3, 1.0);
    let texture = Field::random(&mut rng, 6, 12.0);
    let shapes: Vec<(Shape, usize)> = (0..SHAPES)
        .map(|_| {
            let material = rng.random_range(0..MATERIALS);
            let shape = if rng.random_bool(0.5) {
                let (y0, x0) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.1..0.3),
                    x1: x0 + rng.random_range(0.1..0.3),
                }
            } else {
                Shape::Disk {
                    cy: rng.random_range(0.15..0.85),
                    cx: rng.random_range(0.15..0.85),
                    r: rng.random_range(0.06..0.18),
                }
            };
            (shape, material)
        })
        .collect();

    // Per-pixel mixing weights and a band-independent gain.
    let plane = height * width;
    let mut weights = vec![[0.0f64; MATERIALS]; plane];
    let mut gain = vec![0.0f64; plane];
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64 / height as f64, x as f64 / width as f64);
            let mut w = [0.0; MATERIALS];
            for (m, f) in abundance.iter().enumerate() {
                w[m] = (4.0 * f.at(fy, fx)).exp();
            }
            for (shape, m) in &shapes {
                if shape.contains(fy, fx) {
                    w = [0.05; MATERIALS];
                    w[*m] = 1.0;
                }
            }
            let total: f64 = w.iter().sum();
            let i = y * width + x;
            for m in 0..MATERIALS {
                weights[i][m] = w[m] / total;
            }
            gain[i] = (0.85 + 0.15 * shading.at(fy, fx)) * (1.0 + 0.04 * texture.at(fy, fx));
        }
    }

    let mut data = Vec::with_capacity(plane * bands);
    for b in 0..bands {
        for i in 0..plane {
            let refl: f64 = (0..MATERIALS).map(|m| weights[i][m] * signatures[m][b]).sum();
            data.push((gain[i] * refl).clamp(0.05, 0.95) as f32);
        }
    }
    HsiCube::new(height, width, bands, data)
}

/// Low-light degradation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    /// Mean illumination gain in `(0, 1]`.
    pub illumination_gain: f32,
    /// Relative amplitude in `[0, 1)` of a smooth spatial modulation of the
    /// gain; 0 gives uniform darkening.
    pub gain_variation: f32,
    pub gaussian_sigma: f32,
    /// Fraction of cube elements replaced by 0 or 1.
    pub impulse_fraction: f32,
    /// Fraction of (band, column) pairs receiving a constant offset.
    pub stripe_fraction: f32,
    /// Stripe offsets are uniform in `[-amplitude, amplitude]`.
    pub stripe_amplitude: f32,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            illumination_gain: 0.2,
            gain_variation: 0.0,
            gaussian_sigma: 0.02,
            impulse_fraction: 0.01,
            stripe_fraction: 0.05,
            stripe_amplitude: 0.02,
            seed: 0,
        }
    }
}

impl DegradeConfig {
    /// Darkening only, no noise.
    pub fn identity() -> Self {
        Self {
            illumination_gain: 1.0,
            gain_variation: 0.0,
            gaussian_sigma: 0.0,
            impulse_fraction: 0.0,
            stripe_fraction: 0.0,
            stripe_amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.illumination_gain > 0.0 && self.illumination_gain <= 1.0) {
            return Err(invalid!("illumination_gain must lie in (0, 1], got {}", self.illumination_gain));
        }
        if !(0.0..1.0).contains(&self.gain_variation) {
            return Err(invalid!("gain_variation must lie in [0, 1), got {}", self.gain_variation));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(invalid!("gaussian_sigma must be finite and >= 0"));
        }
        for (name, v) in [("impulse_fraction", self.impulse_fraction), ("stripe_fraction", self.stripe_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.stripe_amplitude >= 0.0 && self.stripe_amplitude.is_finite()) {
            return Err(invalid!("stripe_amplitude must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Darkens and corrupts a clean cube; output is clamped to `[0, 1]`.
/// Each band draws from its own seeded stream.
pub fn degrade(cube: &HsiCube, cfg: &DegradeConfig) -> Result<HsiCube> {
    cfg.validate()?;
    let (h, w, bands) = cube.dims();
    let plane = h * w;
    let base_gain = f64::from(cfg.illumination_gain);

    let gain_field: Option<Vec<f64>> = (cfg.gain_variation > 0.0).then(|| {
        let field = Field::random(&mut stream(cfg.seed, "gain-field", 0), 3, 1.0);
        let var = f64::from(cfg.gain_variation);
        (0..plane)
            .map(|i| {
                let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
                (base_gain * (1.0 + var * field.at(y, x))).clamp(1e-6, 1.0)
            })
            .collect()
    });

    let out: Vec<Vec<f32>> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, "degrade", b as u64);
            let src = cube.band_slice(b);
            let mut band: Vec<f32> = match &gain_field {
                Some(g) => src.iter().zip(g).map(|(&v, &gi)| (gi * f64::from(v)) as f32).collect(),
                None => src.iter().map(|&v| cfg.illumination_gain * v).collect(),
            };
            if cfg.gaussian_sigma > 0.0 {
                let normal = Normal::new(0.0, f64::from(cfg.gaussian_sigma)).expect("valid sigma");
                for v in &mut band {
                    *v = (f64::from(*v) + normal.sample(&mut rng)) as f32;
                }
            }
            if cfg.stripe_fraction > 0.0 {
                let amp = f64::from(cfg.stripe_amplitude);
                for x in 0..w {
                    if rng.random_bool(f64::from(cfg.stripe_fraction)) {
                        let offset = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 } as f32;
                        for y in 0..h {
                            band[y * w + x] += offset;
                        }
                    }
                }
            }
            if cfg.impulse_fraction > 0.0 {
                for v in &mut band {
                    if rng.random_bool(f64::from(cfg.impulse_fraction)) {
                        *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                    }
                }
            }
            for v in &mut band {
                *v = v.clamp(0.0, 1.0);
            }
            band
        })
        .collect();
    HsiCube::new(h, w, bands, out.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn scenes_are_deterministic_and_bounded() {
        let a = synth_scene(32, 32, 8, 11).unwrap();
        let b = synth_scene(32, 32, 8, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_scene(32, 32, 8, 12).unwrap());
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.05 && hi <= 0.95, "{lo} {hi}");
        assert!(synth_scene(31, 32, 8, 0).is_err());
        assert!(synth_scene(32, 32, 1, 0).is_err());
    }

    #[test]
    fn neighbouring_bands_are_strongly_correlated() {
        for seed in 0..5 {
            let cube = synth_scene(64, 64, 32, seed).unwrap();
            let mean = (0..31)
                .map(|b| pearson(cube.band_slice(b), cube.band_slice(b + 1)))
                .sum::<f64>()
                / 31.0;
            assert!(mean > 0.9, "seed {seed}: mean adjacent correlation {mean}");
        }
    }

    #[test]
    fn identity_and_pure_darkening() {
        let cube = synth_scene(16, 16, 4, 3).unwrap();
        assert_eq!(degrade(&cube, &DegradeConfig::identity()).unwrap(), cube);
        let dark = DegradeConfig {
            illumination_gain: 0.2,
            ..DegradeConfig::identity()
        };
        let out = degrade(&cube, &dark).unwrap();
        for (o, c) in out.data().iter().zip(cube.data()) {
            assert_eq!(*o, 0.2 * c);
        }
    }

    #[test]
    fn noise_statistics_follow_config() {
        let clean = HsiCube::new(64, 64, 32, vec![0.5; 64 * 64 * 32]).unwrap();
        let cfg = DegradeConfig {
            illumination_gain: 1.0,
            gaussian_sigma: 0.02,
            impulse_fraction: 0.01,
            stripe_fraction: 0.05,
            stripe_amplitude: 0.1,
            seed: 5,
            ..DegradeConfig::identity()
        };
        let out = degrade(&clean, &cfg).unwrap();
        let n = out.data().len() as f64;
        let impulses = out.data().iter().filter(|&&v| v == 0.0 || v == 1.0).count() as f64;
        let frac = impulses / n;
        assert!((frac - 0.01).abs() < 0.2 * 0.01, "impulse fraction {frac}");

        // Column means reveal stripes: noise averages out over 64 rows.
        let mut striped = 0usize;
        let mut offsets = 0.0;
        for b in 0..32 {
            for x in 0..64 {
                let col: Vec<f64> = (0..64)
                    .map(|y| f64::from(out.get(b, y, x)))
                    .filter(|&v| v != 0.0 && v != 1.0)
                    .collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64 - 0.5;
                if mean.abs() > 0.015 {
                    striped += 1;
                    offsets += mean.abs();
                }
            }
        }
        // Offsets below the threshold go undetected: P(|U(-a, a)| > t) = 1 - t / a.
        let stripe_frac = striped as f64 / (32.0 * 64.0);
        let detectable = 0.05 * (1.0 - 0.015 / 0.1);
        assert!((stripe_frac - detectable).abs() < 0.25 * detectable, "stripe fraction {stripe_frac}");
        // |U(-a, a)| conditioned on exceeding the detection threshold t has
        // mean (a + t) / 2.
        let mean_offset = offsets / striped as f64;
        let expected = (0.1 + 0.015) / 2.0;
        assert!((mean_offset - expected).abs() < 0.2 * expected, "offset {mean_offset}");

        let gauss_only = DegradeConfig {
            illumination_gain: 1.0,
            gaussian_sigma: 0.02,
            seed: 5,
            ..DegradeConfig::identity()
        };
        let noisy = degrade(&clean, &gauss_only).unwrap();
        let var = noisy.data().iter().map(|&v| (f64::from(v) - 0.5).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.02).abs() < 0.2 * 0.02, "sigma {}", var.sqrt());
    }

    #[test]
    fn output_stays_in_unit_range() {
        let cube = synth_scene(16, 16, 6, 9).unwrap();
        let cfg = DegradeConfig {
            illumination_gain: 1.0,
            gaussian_sigma: 0.3,
            stripe_fraction: 0.5,
            stripe_amplitude: 0.5,
            ..DegradeConfig::default()
        };
        let (lo, hi) = degrade(&cube, &cfg).unwrap().min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }
}
