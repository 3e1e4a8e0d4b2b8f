use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::error::Error;
use crate::hsidata::synth_scene;
use crate::rng;

fn add_noise(cube: &HsiCube, sigma: f64, seed: u64) -> HsiCube {
    let mut r = rng::stream(seed, "metrics-noise", 0);
    let n = Normal::new(0.0, sigma).unwrap();
    let data = cube.data().iter().map(|&v| v + n.sample(&mut r) as f32).collect();
    HsiCube::new(cube.height(), cube.width(), cube.bands(), data).unwrap()
}

fn random_cube(h: usize, w: usize, b: usize, seed: u64) -> HsiCube {
    let mut r = rng::stream(seed, "metrics-cube", 0);
    HsiCube::new(h, w, b, (0..h * w * b).map(|_| r.random_range(0.0..1.0f32)).collect()).unwrap()
}

/// Direct 2D sliding-window SSIM with explicitly built 11x11 weights.
fn ssim_oracle(x: &Band<f64>, y: &Band<f64>) -> f64 {
    let mut w2 = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in w2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (h, w) = x.dims();
    let mut total = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = w2[i][j] / s;
                    let (a, b) = (x.get(y0 + i, x0 + j), y.get(y0 + i, x0 + j));
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

#[test]
fn psnr_examples() {
    let a = Band::from_fn(8, 8, |y, x| (y * 8 + x) as f64 / 100.0);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let c = a.map(|v| v * 0.7);
    assert_eq!(psnr(&a, &c, 1.0).unwrap(), psnr(&c, &a, 1.0).unwrap());
    assert!(matches!(psnr(&a, &Band::filled(8, 4, 0.0), 1.0), Err(Error::Shape(_))));
}

#[test]
fn mpsnr_is_mean_of_bands() {
    // Band 0 off by 0.1 (20 dB), band 1 off by 0.01 (40 dB).
    let reference = HsiCube::new(4, 4, 2, vec![0.5; 32]).unwrap();
    let mut data = vec![0.6f32; 16];
    data.extend(vec![0.51f32; 16]);
    let test = HsiCube::new(4, 4, 2, data).unwrap();
    let curve = band_psnr_curve(&reference, &test).unwrap();
    assert!((curve[0] - 20.0).abs() < 1e-5 && (curve[1] - 40.0).abs() < 1e-4);
    assert!((mpsnr(&reference, &test).unwrap() - 30.0).abs() < 1e-4);
    for (b, v) in curve.iter().enumerate() {
        assert_eq!(*v, psnr(&reference.band(b), &test.band(b), 1.0).unwrap());
    }
    assert!(band_psnr_curve(&reference, &reference).unwrap().iter().all(|v| v.is_infinite()));
    assert_eq!(mpsnr(&reference, &reference).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_decreases_with_noise() {
    let cube = synth_scene(32, 32, 4, 1).unwrap();
    let values: Vec<f64> = [0.01, 0.02, 0.05, 0.1]
        .iter()
        .map(|&s| mpsnr(&cube, &add_noise(&cube, s, 9)).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] > w[1]), "{values:?}");
}

#[test]
fn ssim_identity_symmetry_and_oracle() {
    let cube = synth_scene(24, 20, 3, 2).unwrap();
    assert_eq!(mssim(&cube, &cube).unwrap(), 1.0);
    let noisy = add_noise(&cube, 0.05, 3);
    assert_eq!(mssim(&cube, &noisy).unwrap(), mssim(&noisy, &cube).unwrap());
    for b in 0..3 {
        let (x, y) = (cube.band(b).cast::<f64>(), noisy.band(b).cast::<f64>());
        assert!((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs() < 1e-12);
    }
    assert!(matches!(ssim(&Band::filled(10, 20, 0.0f32), &Band::filled(10, 20, 0.0f32)), Err(Error::Invalid(_))));
}

#[test]
fn ssim_drops_under_strong_noise() {
    let cube = synth_scene(64, 64, 2, 4).unwrap();
    let noisy = add_noise(&cube, 0.2, 5);
    let v = mssim(&cube, &noisy).unwrap();
    assert!(v < 0.5, "mssim {v}");
    let x = cube.band(0).cast::<f64>();
    let y = noisy.band(0).cast::<f64>();
    assert!((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs() < 1e-12);
}

#[test]
fn sam_examples() {
    let cube = random_cube(6, 5, 7, 1);
    let half = HsiCube::new(6, 5, 7, cube.data().iter().map(|v| v * 0.5).collect()).unwrap();
    assert!(sam(&cube, &half).unwrap() < 1e-6);

    let r = HsiCube::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
    let t = HsiCube::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
    assert!((sam(&r, &t).unwrap() - 90.0).abs() < 1e-12);

    let zero = HsiCube::zeros(2, 2, 3);
    assert!(matches!(sam(&zero, &zero), Err(Error::Invalid(_))));
    assert!(sam(&HsiCube::zeros(2, 2, 1), &HsiCube::zeros(2, 2, 1)).is_err());

    let mut data = cube.data().to_vec();
    for b in 0..7 {
        data[b * 30] = 0.0;
    }
    let holed = HsiCube::new(6, 5, 7, data).unwrap();
    let s = sam_summary(&holed, &cube).unwrap();
    assert_eq!(s.skipped, 1);
}

#[test]
fn sam_matches_brute_force() {
    let a = random_cube(5, 4, 9, 2);
    let b = random_cube(5, 4, 9, 3);
    let mut total = 0.0;
    for y in 0..5 {
        for x in 0..4 {
            let (r, t) = (a.spectrum(y, x), b.spectrum(y, x));
            let dot: f64 = r.iter().zip(&t).map(|(p, q)| f64::from(*p) * f64::from(*q)).sum();
            let nr: f64 = r.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
            let nt: f64 = t.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
            total += (dot / (nr * nt)).clamp(-1.0, 1.0).acos().to_degrees();
        }
    }
    assert!((sam(&a, &b).unwrap() - total / 20.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn sam_invariant_to_pixel_scaling(seed in any::<u64>()) {
        let a = random_cube(4, 4, 6, seed);
        let b = random_cube(4, 4, 6, seed ^ 7);
        let mut r = rng::stream(seed, "scale", 0);
        let scales: Vec<f32> = (0..16).map(|_| r.random_range(0.1..10.0)).collect();
        let mut data = b.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v *= scales[i % 16];
        }
        let scaled = HsiCube::new(4, 4, 6, data).unwrap();
        prop_assert!((sam(&a, &b).unwrap() - sam(&a, &scaled).unwrap()).abs() < 1e-4);
    }
}

#[test]
fn metrics_order_by_severity() {
    let cube = synth_scene(32, 32, 8, 6).unwrap();
    let mild = add_noise(&cube, 0.01, 1);
    let heavy = add_noise(&cube, 0.1, 1);
    let [i, m, h] = [&cube, &mild, &heavy].map(|t| MetricsReport::compute(&cube, t).unwrap());
    assert!(i.mpsnr > m.mpsnr && m.mpsnr > h.mpsnr);
    assert!(i.mssim > m.mssim && m.mssim > h.mssim);
    assert!(i.sam_deg < m.sam_deg && m.sam_deg < h.sam_deg);
}

#[test]
fn report_json_writes_inf() {
    let cube = synth_scene(16, 16, 3, 7).unwrap();
    let rep = MetricsReport::compute(&cube, &cube).unwrap();
    let json = rep.to_json();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["mpsnr"], "inf");
    assert_eq!(v["band_psnr"][2], "inf");
    assert_eq!(v["mssim"], 1.0);
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.mpsnr, f64::INFINITY);
    assert!(serde_json::from_str::<MetricsReport>(r#"{"mpsnr":"nan","mssim":1,"sam_deg":0,"band_psnr":[]}"#).is_err());

    assert_eq!(curve_csv(&[20.5, f64::INFINITY]), "band,psnr\n0,20.5\n1,inf\n");
}
