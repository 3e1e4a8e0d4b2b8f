use rayon::prelude::*;

use crate::error::{invalid, Result};

use super::{Band, HsiCube};

/// Band indices kept by [`select_bands`].
pub fn select_band_indices(total: usize, drop_front: usize, drop_back: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(invalid!("band stride must be at least 1"));
    }
    if drop_front + drop_back >= total {
        return Err(invalid!(
            "dropping {drop_front} leading and {drop_back} trailing bands leaves none of {total}"
        ));
    }
    Ok((drop_front..total - drop_back).step_by(stride).collect())
}

/// Drops leading/trailing bands, then keeps every `stride`-th remaining band.
pub fn select_bands(cube: &HsiCube, drop_front: usize, drop_back: usize, stride: usize) -> Result<HsiCube> {
    let keep = select_band_indices(cube.bands(), drop_front, drop_back, stride)?;
    Ok(cube.crop(&keep, 0, 0, cube.height(), cube.width()))
}

/// Global min-max scaling to `[0, 1]`. A constant cube maps to zeros.
pub fn normalize(cube: &HsiCube) -> Result<HsiCube> {
    let (lo, hi) = cube.min_max();
    let range = f64::from(hi) - f64::from(lo);
    let data = if range > 0.0 {
        cube.data()
            .iter()
            .map(|&v| ((f64::from(v) - f64::from(lo)) / range) as f32)
            .collect()
    } else {
        vec![0.0; cube.data().len()]
    };
    HsiCube::new(cube.height(), cube.width(), cube.bands(), data)
}

/// The `k` neighbouring band indices used as spectral context for
/// `band_index`: half below and half above (the extra one above for odd `k`),
/// shifted inward near the ends of the spectrum so that exactly `k` in-range
/// indices are returned. The band itself is never included.
pub fn adjacent_window(band_index: usize, total_bands: usize, k: usize) -> Result<Vec<usize>> {
    if k >= total_bands {
        return Err(invalid!("window of {k} adjacent bands needs more than {total_bands} bands"));
    }
    if band_index >= total_bands {
        return Err(invalid!("band {band_index} out of range for {total_bands} bands"));
    }
    let start = band_index.saturating_sub(k / 2).min(total_bands - 1 - k);
    Ok((start..=start + k).filter(|&b| b != band_index).collect())
}

/// One training example: a band patch, its spectral context and the
/// matching ground-truth patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub band_index: usize,
    pub row: usize,
    pub col: usize,
    /// Band indices of `cube_patch`, in order.
    pub window: Vec<usize>,
    pub band_patch: Band<f32>,
    pub cube_patch: HsiCube,
    pub label_patch: Band<f32>,
}

/// Non-overlapping `patch x patch` tiles of every band (floor tiling; right
/// and bottom remainders are discarded). Output order is band-major, then
/// row-major over tiles.
pub fn extract_patches(low: &HsiCube, label: &HsiCube, patch: usize, k: usize) -> Result<Vec<PatchSample>> {
    low.same_shape(label)?;
    let (h, w, bands) = low.dims();
    if patch == 0 || patch > h || patch > w {
        return Err(invalid!("patch size {patch} does not fit a {h}x{w} image"));
    }
    let (rows, cols) = (h / patch, w / patch);
    let per_band = (0..bands)
        .into_par_iter()
        .map(|b| {
            let window = adjacent_window(b, bands, k)?;
            let band = low.band(b);
            let truth = label.band(b);
            let mut out = Vec::with_capacity(rows * cols);
            for ty in 0..rows {
                for tx in 0..cols {
                    let (row, col) = (ty * patch, tx * patch);
                    out.push(PatchSample {
                        band_index: b,
                        row,
                        col,
                        window: window.clone(),
                        band_patch: band.crop(row, col, patch, patch),
                        cube_patch: low.crop(&window, row, col, patch, patch),
                        label_patch: truth.crop(row, col, patch, patch),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_band.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every contiguous run of `k + 1` bands containing the center
    /// and returns the one whose center is most balanced.
    fn window_oracle(center: usize, total: usize, k: usize) -> Vec<usize> {
        let mut best: Option<(usize, Vec<usize>)> = None;
        for start in 0..=total - (k + 1) {
            let run: Vec<usize> = (start..start + k + 1).collect();
            if !run.contains(&center) {
                continue;
            }
            let below = center - start;
            let ideal = k / 2;
            let cost = below.abs_diff(ideal);
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, run.into_iter().filter(|&b| b != center).collect()));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn band_selection_matches_capture_protocols() {
        assert_eq!(select_band_indices(224, 20, 12, 3).unwrap().len(), 64);
        assert_eq!(select_band_indices(204, 6, 6, 3).unwrap().len(), 64);
        let cube = HsiCube::new(2, 2, 5, (0..20).map(|v| v as f32).collect()).unwrap();
        assert_eq!(select_bands(&cube, 0, 0, 1).unwrap(), cube);
        assert!(select_bands(&cube, 3, 2, 1).is_err());
        assert!(select_bands(&cube, 0, 0, 0).is_err());
    }

    #[test]
    fn normalize_rules() {
        let cube = HsiCube::new(1, 6, 1, vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        let n = normalize(&cube).unwrap();
        assert_eq!(n.min_max(), (0.0, 1.0));

        let unit = HsiCube::new(1, 3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize(&unit).unwrap(), unit);

        let flat = HsiCube::new(2, 2, 2, vec![0.4; 8]).unwrap();
        assert!(normalize(&flat).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn windows_at_center_and_edges() {
        let expect: Vec<usize> = (18..=29).chain(31..=42).collect();
        assert_eq!(adjacent_window(30, 64, 24).unwrap(), expect);
        assert_eq!(adjacent_window(0, 64, 24).unwrap(), (1..=24).collect::<Vec<_>>());
        assert_eq!(adjacent_window(63, 64, 24).unwrap(), (39..=62).collect::<Vec<_>>());
        for b in [0, 63] {
            assert_eq!(adjacent_window(b, 64, 24).unwrap(), window_oracle(b, 64, 24));
        }
        assert!(adjacent_window(0, 24, 24).is_err());
    }

    #[test]
    fn patch_counts() {
        let lab = HsiCube::zeros(390, 512, 2);
        assert_eq!(extract_patches(&lab, &lab, 64, 1).unwrap().len(), 2 * 48);
        let sq = HsiCube::zeros(64, 64, 3);
        assert_eq!(extract_patches(&sq, &sq, 64, 2).unwrap().len(), 3);
        let odd = HsiCube::zeros(100, 100, 2);
        assert_eq!(extract_patches(&odd, &odd, 64, 1).unwrap().len(), 2);
        assert!(extract_patches(&sq, &sq, 65, 2).is_err());
    }

    #[test]
    fn patches_carry_their_provenance() {
        let low = HsiCube::new(8, 8, 4, (0..256).map(|v| v as f32).collect()).unwrap();
        let label = HsiCube::new(8, 8, 4, (0..256).map(|v| -(v as f32)).collect()).unwrap();
        let samples = extract_patches(&low, &label, 4, 2).unwrap();
        assert_eq!(samples.len(), 4 * 2 * 2);
        // band-major then row-major
        let order: Vec<(usize, usize, usize)> = samples.iter().map(|s| (s.band_index, s.row, s.col)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        for s in &samples {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(s.label_patch.get(y, x), label.get(s.band_index, s.row + y, s.col + x));
                    assert_eq!(s.band_patch.get(y, x), low.get(s.band_index, s.row + y, s.col + x));
                    for (i, &wb) in s.window.iter().enumerate() {
                        assert_eq!(s.cube_patch.get(i, y, x), low.get(wb, s.row + y, s.col + x));
                    }
                }
            }
            assert!(!s.window.contains(&s.band_index));
        }
    }

    proptest! {
        #[test]
        fn window_invariants(total in 2usize..80, k_frac in 0.0f64..1.0, b_frac in 0.0f64..1.0) {
            let k = 1 + ((total - 2) as f64 * k_frac) as usize;
            let b = ((total - 1) as f64 * b_frac) as usize;
            let win = adjacent_window(b, total, k).unwrap();
            prop_assert_eq!(win.len(), k);
            prop_assert!(win.windows(2).all(|p| p[0] < p[1]));
            prop_assert!(win.iter().all(|&i| i < total && i != b));
            let below = win.iter().filter(|&&i| i < b).count();
            prop_assert_eq!(below + win.iter().filter(|&&i| i > b).count(), k);
            prop_assert_eq!(win, window_oracle(b, total, k));
        }

        #[test]
        fn selection_count_closed_form(total in 1usize..300, front in 0usize..40, back in 0usize..40, stride in 1usize..6) {
            if front + back < total {
                let n = select_band_indices(total, front, back, stride).unwrap().len();
                prop_assert_eq!(n, (total - front - back).div_ceil(stride));
            }
        }
    }
}
