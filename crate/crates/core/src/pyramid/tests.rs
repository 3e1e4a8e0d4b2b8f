use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::error::Error;
use crate::hsidata::synth_scene;
use crate::rng;

const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn random_band<T: Scalar>(h: usize, w: usize, seed: u64) -> Band<T> {
    let mut r = rng::stream(seed, "pyramid-test", 0);
    Band::from_fn(h, w, |_, _| T::of(r.random_range(0.0..1.0)))
}

/// Mirror without edge repeat, written out by cases.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    assert!((0..n).contains(&r), "oracle mirror only handles one bounce");
    r as usize
}

fn reduce_oracle(x: &Band<f64>) -> Band<f64> {
    let (h, w) = x.dims();
    Band::from_fn(h / 2, w / 2, |i, j| {
        let mut s = 0.0;
        for a in -2isize..=2 {
            for b in -2isize..=2 {
                let (y, xx) = (mirror(2 * i as isize + a, h), mirror(2 * j as isize + b, w));
                s += TAPS[(a + 2) as usize] * TAPS[(b + 2) as usize] * x.get(y, xx);
            }
        }
        s
    })
}

/// Zero insertion, then 2D convolution with `4 * outer(taps, taps)` using
/// mirrored indices of the zero-inserted image.
fn expand_oracle(low: &Band<f64>) -> Band<f64> {
    let (h, w) = (2 * low.height(), 2 * low.width());
    let z = Band::from_fn(h, w, |y, x| if y % 2 == 0 && x % 2 == 0 { low.get(y / 2, x / 2) } else { 0.0 });
    Band::from_fn(h, w, |y, x| {
        let mut s = 0.0;
        for a in -2isize..=2 {
            for b in -2isize..=2 {
                let (yy, xx) = (mirror(y as isize + a, h), mirror(x as isize + b, w));
                s += 4.0 * TAPS[(a + 2) as usize] * TAPS[(b + 2) as usize] * z.get(yy, xx);
            }
        }
        s
    })
}

#[test]
fn kernel_invariants() {
    let k = GaussianKernel::default();
    assert_eq!(k.taps(), TAPS);
    assert_eq!(k.sum(), 1.0);
    assert_eq!(k.phase_sums(), (0.5, 0.5));
    k.check().unwrap();
    let bad = GaussianKernel::from_taps([0.1, 0.2, 0.4, 0.2, 0.1]);
    assert!(bad.invariant_error() > 0.05);
    assert!(matches!(bad.check(), Err(Error::Invalid(_))));
}

#[test]
fn constant_band_has_no_detail() {
    for (h, w) in [(2, 2), (4, 6), (16, 16), (10, 4)] {
        let band = Band::filled(h, w, 0.37f64);
        let p = decompose(&band).unwrap();
        assert!(p.high.data().iter().all(|v| v.abs() < 1e-15), "{h}x{w}");
        assert!(p.low.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        assert_eq!(p.low.dims(), (h / 2, w / 2));

        let rebuilt = reconstruct(&PyramidPair { high: Band::filled(h, w, 0.0f64), low: Band::filled(h / 2, w / 2, 0.37) }).unwrap();
        assert!(rebuilt.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }
}

#[test]
fn round_trip_exact() {
    let band32 = random_band::<f32>(64, 64, 1);
    let back = reconstruct(&decompose(&band32).unwrap()).unwrap();
    assert!(back.max_abs_diff(&band32).unwrap() < 1e-6);

    let band64 = random_band::<f64>(64, 64, 2);
    let back = reconstruct(&decompose(&band64).unwrap()).unwrap();
    assert!(back.max_abs_diff(&band64).unwrap() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn round_trip_any_even_size(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let band = random_band::<f64>(2 * h, 2 * w, seed);
        let back = reconstruct(&decompose(&band).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&band).unwrap() < 1e-12);
        let b32 = band.cast::<f32>();
        let back = reconstruct(&decompose(&b32).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&b32).unwrap() < 1e-6);
    }

    #[test]
    fn decompose_matches_oracle(h in 3usize..10, w in 3usize..10, seed in any::<u64>()) {
        let band = random_band::<f64>(2 * h, 2 * w, seed);
        let p = decompose(&band).unwrap();
        prop_assert!(p.low.max_abs_diff(&reduce_oracle(&band)).unwrap() < 1e-14);
        let up = expand_oracle(&p.low);
        let high = Band::from_fn(2 * h, 2 * w, |y, x| band.get(y, x) - up.get(y, x));
        prop_assert!(p.high.max_abs_diff(&high).unwrap() < 1e-14);
    }

    #[test]
    fn mean_is_permutation_invariant(seed in any::<u64>(), k in 1usize..6) {
        let i_h = random_band::<f64>(6, 4, seed);
        let mut c_h: Vec<_> = (0..k).map(|i| random_band::<f64>(6, 4, seed ^ (i as u64 + 1))).collect();
        let a = mean_high_frequency(&i_h, &c_h).unwrap();
        c_h.reverse();
        c_h.rotate_left(k / 2);
        let b = mean_high_frequency(&i_h, &c_h).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
    }
}

#[test]
fn impulse_low_band() {
    let mut band = Band::filled(16, 16, 0.0f64);
    band.data_mut()[4 * 16 + 4] = 1.0;
    let p = decompose(&band).unwrap();
    // Even-index samples 2, 4, 6 see taps 1/16, 6/16, 1/16 of the impulse.
    let phase = |i: usize| match i {
        1 => 1.0 / 16.0,
        2 => 6.0 / 16.0,
        3 => 1.0 / 16.0,
        _ => 0.0,
    };
    for i in 0..8 {
        for j in 0..8 {
            assert!((p.low.get(i, j) - phase(i) * phase(j)).abs() < 1e-15, "({i},{j})");
        }
    }
    assert!(p.low.max_abs_diff(&reduce_oracle(&band)).unwrap() < 1e-15);
}

#[test]
fn reconstruct_matches_direct_oracle() {
    let high = random_band::<f64>(12, 10, 3);
    let low = random_band::<f64>(6, 5, 4);
    let got = reconstruct(&PyramidPair { high: high.clone(), low: low.clone() }).unwrap();
    let up = expand_oracle(&low);
    let want = Band::from_fn(12, 10, |y, x| high.get(y, x) + up.get(y, x));
    assert!(got.max_abs_diff(&want).unwrap() < 1e-14);
}

#[test]
fn rejects_odd_and_mismatched() {
    assert!(matches!(decompose(&Band::filled(5, 4, 0.0f32)), Err(Error::Invalid(_))));
    assert!(matches!(decompose(&Band::filled(4, 3, 0.0f32)), Err(Error::Invalid(_))));
    let mut nan = Band::filled(4, 4, 0.0f32);
    nan.data_mut()[3] = f32::NAN;
    assert!(matches!(decompose(&nan), Err(Error::NonFinite(_))));
    let bad = PyramidPair { high: Band::filled(4, 4, 0.0f32), low: Band::filled(3, 2, 0.0f32) };
    assert!(matches!(reconstruct(&bad), Err(Error::Shape(_))));
}

#[test]
fn mean_high_frequency_examples() {
    let a = random_band::<f64>(4, 4, 5);
    assert_eq!(mean_high_frequency(&a, &[]).unwrap(), a);
    let same = mean_high_frequency(&a, &[a.clone(), a.clone()]).unwrap();
    assert!(same.max_abs_diff(&a).unwrap() < 1e-15);

    let half = mean_high_frequency(&Band::filled(3, 2, 1.0f64), &[Band::filled(3, 2, 0.0)]).unwrap();
    assert!(half.data().iter().all(|&v| v == 0.5));

    let stack: Vec<_> = (0..4).map(|i| random_band::<f64>(4, 4, 10 + i)).collect();
    let got = mean_high_frequency(&a, &stack).unwrap();
    for idx in 0..16 {
        let sum = a.data()[idx] + stack.iter().map(|b| b.data()[idx]).sum::<f64>();
        assert!((got.data()[idx] - sum / 5.0).abs() < 1e-15);
    }
    assert!(matches!(mean_high_frequency(&a, &[Band::filled(4, 2, 0.0)]), Err(Error::Shape(_))));
}

#[test]
fn cube_decomposition_is_bandwise() {
    let scene = synth_scene(16, 12, 5, 3).unwrap();
    let mut data = scene.data().to_vec();
    data[..16 * 12].fill(0.4);
    let cube = HsiCube::new(16, 12, 5, data).unwrap();
    let (c_h, c_l) = decompose_cube(&cube).unwrap();
    assert_eq!(c_h.dims(), (16, 12, 5));
    assert_eq!(c_l.dims(), (8, 6, 5));
    assert!(c_h.band_slice(0).iter().all(|v| v.abs() < 1e-6));
    for b in 0..5 {
        let p = decompose(&cube.band(b)).unwrap();
        assert_eq!(c_h.band(b), p.high);
        assert_eq!(c_l.band(b), p.low);
        let back = reconstruct(&PyramidPair { high: c_h.band(b), low: c_l.band(b) }).unwrap();
        assert!(back.max_abs_diff(&cube.band(b)).unwrap() < 1e-6);
    }
    assert!(decompose_cube(&HsiCube::zeros(5, 4, 2)).is_err());
}

#[test]
fn detail_is_sparse_on_smooth_scenes() {
    for seed in 0..3 {
        let scene = synth_scene(64, 64, 4, seed).unwrap();
        for b in 0..4 {
            let band = scene.band(b).cast::<f64>();
            let mean = band.mean();
            let spread = band.data().iter().map(|v| (v - mean).abs()).sum::<f64>() / band.data().len() as f64;
            let high = decompose(&band).unwrap().high;
            let detail = high.data().iter().map(|v| v.abs()).sum::<f64>() / high.data().len() as f64;
            assert!(detail < spread, "seed {seed} band {b}: {detail} vs {spread}");
        }
    }
}
