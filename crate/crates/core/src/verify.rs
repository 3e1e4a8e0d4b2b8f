//! Self-check suites run by `hsie verify`: analytic gradients against
//! central differences, the pyramid against independent loop oracles, and
//! the metrics against closed-form and brute-force values. Every check
//! reports an error and the tolerance it must stay under.

use std::fmt;
use std::time::Instant;

use rand::Rng as _;

use crate::error::Result;
use crate::hsidata::{Band, HsiCube};
use crate::metrics::{mssim, psnr, sam};
use crate::model::{forward_graph, init_model, HsieConfig, ModelInputs, Net};
use crate::numerics::{grad_check, Graph, Tensor, Var, DEFAULT_STEP};
use crate::pyramid::{decompose_with, reconstruct_with, reduce_band, upscale_band, GaussianKernel};
use crate::rng;

/// Tolerance for single-op gradient checks.
pub const OP_GRAD_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end toy model gradient check.
pub const MODEL_GRAD_TOL: f64 = 1e-3;

/// Deliberate corruption used to prove that a suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs one tap of the pyramid blur kernel.
    PyramidKernel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            error,
            tolerance,
        }
    }

    /// NaN errors fail.
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// Largest error relative to its tolerance, as `(check, ratio)`.
    pub fn worst(&self) -> Option<(&Check, f64)> {
        self.checks
            .iter()
            .map(|c| (c, if c.passed() { c.error / c.tolerance } else { f64::INFINITY }))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok" } else { "FAILED" };
        write!(f, "{}: {status} ({} checks, {:.2}s)", self.name, self.checks.len(), self.seconds)?;
        for c in &self.checks {
            let mark = if c.passed() { " " } else { "!" };
            write!(f, "\n  {mark} {:<34} max error {:.3e} (tol {:.0e})", c.name, c.error, c.tolerance)?;
        }
        Ok(())
    }
}

fn timed(name: &'static str, run: impl FnOnce() -> Result<Vec<Check>>) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = run()?;
    Ok(SuiteReport {
        name,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "verify", 0);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Magnitudes in `[0.1, 1]` so relu and l1 stay away from their kinks.
fn off_kink_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "verify-nz", 0);
    Tensor::from_fn(shape, |_| {
        let m: f64 = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn random_band(h: usize, w: usize, seed: u64) -> Band<f64> {
    let mut r = rng::stream(seed, "verify-band", 0);
    Band::from_fn(h, w, |_, _| r.random_range(0.0..1.0))
}

fn random_cube(h: usize, w: usize, b: usize, seed: u64) -> HsiCube {
    let mut r = rng::stream(seed, "verify-cube", 0);
    HsiCube::new(h, w, b, (0..h * w * b).map(|_| r.random_range(0.0..1.0f32)).collect()).expect("sized")
}

type OpCase = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    let kernel = GaussianKernel::binomial();
    vec![
        ("conv2d 3x3", vec![random_tensor(&[2, 5, 4], 1), random_tensor(&[3, 2, 3, 3], 2), random_tensor(&[3], 3)], Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2])))),
        ("conv2d 7x7 wider than input", vec![random_tensor(&[1, 4, 3], 4), random_tensor(&[2, 1, 7, 7], 5), random_tensor(&[2], 6)], Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2])))),
        ("conv1d", vec![random_tensor(&[9], 7), random_tensor(&[1, 1, 3], 8), random_tensor(&[1], 9)], Box::new(|g, v| g.conv1d(v[0], v[1], Some(v[2])))),
        ("global_avg_pool", vec![random_tensor(&[3, 4, 5], 10)], Box::new(|g, v| g.global_avg_pool(v[0]))),
        ("relu", vec![off_kink_tensor(&[2, 3, 4], 11)], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("sigmoid", vec![random_tensor(&[2, 3, 4], 12)], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("concat", vec![random_tensor(&[2, 3, 3], 13), random_tensor(&[1, 3, 3], 14)], Box::new(|g, v| g.concat(&[v[0], v[1]]))),
        ("add", vec![random_tensor(&[2, 3, 3], 15), random_tensor(&[2, 3, 3], 16)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("mul", vec![random_tensor(&[2, 3, 3], 17), random_tensor(&[2, 3, 3], 18)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("channel_mul", vec![random_tensor(&[3, 2, 4], 19), random_tensor(&[3], 20)], Box::new(|g, v| g.channel_mul(v[0], v[1]))),
        ("add_scalar", vec![random_tensor(&[2, 2, 2], 21)], Box::new(|g, v| Ok(g.add_scalar(v[0], 1.0)))),
        ("bilinear_upsample_x2", vec![random_tensor(&[2, 3, 4], 22)], Box::new(|g, v| g.bilinear_upsample_x2(v[0]))),
        ("laplacian_upscale", vec![random_tensor(&[2, 4, 3], 23)], Box::new(move |g, v| g.laplacian_upscale(v[0], &kernel))),
        ("l1_loss", vec![off_kink_tensor(&[2, 3, 3], 24)], Box::new(|g, v| {
            let target = g.constant(Tensor::zeros(&[2, 3, 3]));
            g.l1_loss(v[0], target)
        })),
        ("mse_loss", vec![random_tensor(&[2, 3, 3], 26), random_tensor(&[2, 3, 3], 27)], Box::new(|g, v| g.mse_loss(v[0], v[1]))),
        ("dot", vec![random_tensor(&[5], 28), random_tensor(&[5], 29)], Box::new(|g, v| g.dot(v[0], v[1]))),
    ]
}

/// Small configuration whose full gradient is cheap to check numerically.
pub fn toy_config() -> HsieConfig {
    HsieConfig {
        k: 4,
        feat: 6,
        n_cab: 2,
        n_dense: 2,
        eca_kernel: 3,
        mask_channels: 4,
        growth: None,
    }
}

/// Finite-difference check of the whole toy model (every parameter) on a
/// 16x16 band under an L1 loss.
pub fn toy_model_gradient_error() -> Result<f64> {
    let cfg = toy_config();
    let params = init_model::<f64>(&cfg, 23)?;
    let adjacent: Vec<Band<f64>> = (0..cfg.k).map(|i| random_band(16, 16, 100 + i as u64)).collect();
    let inputs = ModelInputs::prepare(&random_band(16, 16, 99), &adjacent)?;
    let target = random_band(16, 16, 98).to_tensor();
    let tensors: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    let report = grad_check(&tensors, DEFAULT_STEP, |g, vars| {
        let mut it = vars.iter().copied();
        let net = Net::shapes(&cfg).map(&mut |_, _| it.next().expect("one var per tensor"));
        let v = forward_graph(g, &net, &inputs)?;
        let t = g.constant(target.clone());
        g.l1_loss(v.i_e, t)
    })?;
    Ok(report.max_rel_error)
}

pub fn gradient_suite() -> Result<SuiteReport> {
    timed("gradient", || {
        let mut checks = Vec::new();
        for (name, inputs, op) in op_cases() {
            let r = grad_check(&inputs, DEFAULT_STEP, op)?;
            checks.push(Check::new(name, r.max_rel_error, OP_GRAD_TOL));
        }
        checks.push(Check::new("toy model end-to-end", toy_model_gradient_error()?, MODEL_GRAD_TOL));
        Ok(checks)
    })
}

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror without edge repeat; one bounce is enough for 5-tap kernels.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    (if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    }) as usize
}

fn reduce_oracle(x: &Band<f64>) -> Band<f64> {
    let (h, w) = x.dims();
    Band::from_fn(h / 2, w / 2, |i, j| {
        let mut s = 0.0;
        for a in -2isize..=2 {
            for b in -2isize..=2 {
                let v = x.get(mirror(2 * i as isize + a, h), mirror(2 * j as isize + b, w));
                s += BINOMIAL[(a + 2) as usize] * BINOMIAL[(b + 2) as usize] * v;
            }
        }
        s
    })
}

fn expand_oracle(low: &Band<f64>) -> Band<f64> {
    let (h, w) = (2 * low.height(), 2 * low.width());
    let z = |y: usize, x: usize| if y.is_multiple_of(2) && x.is_multiple_of(2) { low.get(y / 2, x / 2) } else { 0.0 };
    Band::from_fn(h, w, |y, x| {
        let mut s = 0.0;
        for a in -2isize..=2 {
            for b in -2isize..=2 {
                let v = z(mirror(y as isize + a, h), mirror(x as isize + b, w));
                s += 4.0 * BINOMIAL[(a + 2) as usize] * BINOMIAL[(b + 2) as usize] * v;
            }
        }
        s
    })
}

/// Pyramid checks with `kernel` as the kernel under test; the oracles always
/// use the binomial taps.
pub fn pyramid_suite_with(kernel: &GaussianKernel) -> Result<SuiteReport> {
    let kernel = *kernel;
    timed("pyramid", move || {
        let mut checks = vec![Check::new("kernel invariants", kernel.invariant_error(), 1e-12)];

        let (mut rt32, mut rt64) = (0.0f64, 0.0f64);
        for seed in 0..10 {
            let cube = random_cube(32, 32, 4, seed);
            for b in 0..cube.bands() {
                let band = cube.band(b);
                let back = reconstruct_with(&decompose_with(&band, &kernel)?, &kernel)?;
                rt32 = rt32.max(back.max_abs_diff(&band)?);
                let band64 = band.cast::<f64>();
                let back = reconstruct_with(&decompose_with(&band64, &kernel)?, &kernel)?;
                rt64 = rt64.max(back.max_abs_diff(&band64)?);
            }
        }
        checks.push(Check::new("round trip f32", rt32, 1e-5));
        checks.push(Check::new("round trip f64", rt64, 1e-12));

        let (mut red, mut exp) = (0.0f64, 0.0f64);
        for (seed, (h, w)) in [(4usize, 4usize), (8, 6), (16, 12), (6, 10)].into_iter().enumerate() {
            let band = random_band(h, w, 40 + seed as u64);
            red = red.max(reduce_band(&band, &kernel)?.max_abs_diff(&reduce_oracle(&band))?);
            let low = random_band(h / 2, w / 2, 50 + seed as u64);
            exp = exp.max(upscale_band(&low, &kernel).max_abs_diff(&expand_oracle(&low))?);
        }
        checks.push(Check::new("reduce vs loop oracle", red, 1e-12));
        checks.push(Check::new("expand vs loop oracle", exp, 1e-12));

        let flat = Band::filled(10, 14, 0.3f64);
        let pair = decompose_with(&flat, &kernel)?;
        let detail = pair.high.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        checks.push(Check::new("constant band has no detail", detail, 1e-12));
        Ok(checks)
    })
}

pub fn pyramid_suite(fault: Option<Fault>) -> Result<SuiteReport> {
    let mut taps = BINOMIAL;
    if fault == Some(Fault::PyramidKernel) {
        taps[1] += 0.01;
    }
    pyramid_suite_with(&GaussianKernel::from_taps(taps))
}

/// Direct 2D sliding-window SSIM with an explicit 11x11 Gaussian window.
fn ssim_oracle(x: &Band<f64>, y: &Band<f64>) -> f64 {
    let mut win = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (h, w) = x.dims();
    let (mut total, mut count) = (0.0, 0.0);
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in win.iter().enumerate() {
                for (j, &k) in row.iter().enumerate() {
                    let (a, b) = (x.get(y0 + i, x0 + j), y.get(y0 + i, x0 + j));
                    let k = k / s;
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            let (c1, c2) = (1e-4, 9e-4);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

/// Per-pixel `acos` of the normalized inner product, in degrees.
pub fn sam_oracle(reference: &HsiCube, test: &HsiCube) -> f64 {
    let (h, w, _) = reference.dims();
    let (mut sum, mut n) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let r = reference.spectrum(y, x);
            let t = test.spectrum(y, x);
            let dot: f64 = r.iter().zip(&t).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            let nr = r.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
            let nt = t.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
            if nr > 0.0 && nt > 0.0 {
                sum += (dot / (nr * nt)).clamp(-1.0, 1.0).acos().to_degrees();
                n += 1.0;
            }
        }
    }
    sum / n
}

/// Maximum deviation of SAM from the brute-force oracle over `cubes` random
/// cube pairs.
pub fn sam_oracle_error(cubes: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..cubes {
        let a = random_cube(8, 8, 6, 1000 + seed);
        let b = random_cube(8, 8, 6, 2000 + seed);
        worst = worst.max((sam(&a, &b)? - sam_oracle(&a, &b)).abs());
    }
    Ok(worst)
}

pub fn metrics_suite() -> Result<SuiteReport> {
    timed("metrics", || {
        let mut checks = Vec::new();
        let a = random_band(16, 16, 60);
        let shifted = a.map(|v| v + 0.1);
        checks.push(Check::new("psnr(x, x + 0.1) = 20 dB", (psnr(&a, &shifted, 1.0)? - 20.0).abs(), 1e-6));

        let cube = random_cube(12, 12, 5, 61);
        let half = HsiCube::new(12, 12, 5, cube.data().iter().map(|v| v * 0.5).collect())?;
        checks.push(Check::new("sam(x, 0.5x) = 0 deg", sam(&cube, &half)?.abs(), 1e-9));
        checks.push(Check::new("mssim(x, x) = 1", (mssim(&cube, &cube)? - 1.0).abs(), 0.0));
        checks.push(Check::new("sam vs brute force (20 cubes)", sam_oracle_error(20)?, 1e-9));

        let (x, y) = (random_band(20, 17, 62), random_band(20, 17, 63));
        let y = Band::from_fn(20, 17, |i, j| 0.6 * x.get(i, j) + 0.4 * y.get(i, j));
        let ssim_err = (crate::metrics::ssim(&x, &y)? - ssim_oracle(&x, &y)).abs();
        checks.push(Check::new("ssim vs sliding-window oracle", ssim_err, 1e-10));
        Ok(checks)
    })
}

/// Runs every suite in a fixed order.
pub fn run_all(fault: Option<Fault>) -> Result<Vec<SuiteReport>> {
    Ok(vec![gradient_suite()?, pyramid_suite(fault)?, metrics_suite()?])
}
