//! Separable 1D linear maps applied along image axes, with exact adjoints.
//! Used for bilinear upsampling and for pyramid blur/decimate/expand.

use super::Scalar;

/// A linear map from `in_len` samples to `out_len` samples, stored as one
/// sparse tap list per output position.
#[derive(Debug, Clone)]
pub(crate) struct LinearMap1d {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl LinearMap1d {
    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    /// Factor-2 bilinear interpolation, half-pixel centers, edge-clamped.
    pub fn bilinear_x2(n: usize) -> Self {
        let taps = (0..2 * n)
            .map(|o| {
                let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                let frac = src - i0 as f64;
                merge(vec![(i0, 1.0 - frac), (i1, frac)])
            })
            .collect();
        Self { in_len: n, taps }
    }

    fn typed<T: Scalar>(&self) -> Vec<Vec<(usize, T)>> {
        self.taps
            .iter()
            .map(|t| t.iter().map(|&(i, w)| (i, T::of(w))).collect())
            .collect()
    }
}

/// Sums weights of repeated source indices; drops exact zeros.
pub(crate) fn merge(mut taps: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    taps.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(taps.len());
    for (i, w) in taps {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += w,
            _ => out.push((i, w)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

/// Mirror-without-repeat index into `[0, len)`; handles any offset.
pub(crate) fn reflect101(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Applies `rows` along the vertical axis and `cols` along the horizontal axis
/// of an `h x w` plane (`h = rows.in_len`, `w = cols.in_len`).
pub(crate) fn apply_separable<T: Scalar>(
    src: &[T],
    rows: &LinearMap1d,
    cols: &LinearMap1d,
) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (oh, ow) = (rows.out_len(), cols.out_len());
    debug_assert_eq!(src.len(), h * w);
    let ct = cols.typed::<T>();
    let rt = rows.typed::<T>();
    let mut tmp = vec![T::zero(); h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let dst = &mut tmp[y * ow..(y + 1) * ow];
        for (o, taps) in dst.iter_mut().zip(&ct) {
            *o = taps.iter().fold(T::zero(), |a, &(i, wt)| a + wt * line[i]);
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for (oy, taps) in rt.iter().enumerate() {
        let dst = &mut out[oy * ow..(oy + 1) * ow];
        for &(sy, wt) in taps {
            let line = &tmp[sy * ow..(sy + 1) * ow];
            for (o, &v) in dst.iter_mut().zip(line) {
                *o = *o + wt * v;
            }
        }
    }
    out
}

/// Adjoint of [`apply_separable`]: maps an `oh x ow` gradient back to `h x w`.
pub(crate) fn apply_separable_adjoint<T: Scalar>(
    grad: &[T],
    rows: &LinearMap1d,
    cols: &LinearMap1d,
) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (oh, ow) = (rows.out_len(), cols.out_len());
    debug_assert_eq!(grad.len(), oh * ow);
    let ct = cols.typed::<T>();
    let rt = rows.typed::<T>();
    let mut tmp = vec![T::zero(); h * ow];
    for (oy, taps) in rt.iter().enumerate() {
        let g = &grad[oy * ow..(oy + 1) * ow];
        for &(sy, wt) in taps {
            let dst = &mut tmp[sy * ow..(sy + 1) * ow];
            for (o, &v) in dst.iter_mut().zip(g) {
                *o = *o + wt * v;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        let g = &tmp[y * ow..(y + 1) * ow];
        let dst = &mut out[y * w..(y + 1) * w];
        for (&gv, taps) in g.iter().zip(&ct) {
            for &(i, wt) in taps {
                dst[i] = dst[i] + wt * gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect101_mirrors_without_repeating_edge() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect101(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect101(-5, 1), 0);
    }

    #[test]
    fn bilinear_taps_two_samples() {
        let m = LinearMap1d::bilinear_x2(2);
        assert_eq!(m.taps[0], vec![(0, 1.0)]);
        assert_eq!(m.taps[1], vec![(0, 0.75), (1, 0.25)]);
        assert_eq!(m.taps[2], vec![(0, 0.25), (1, 0.75)]);
        assert_eq!(m.taps[3], vec![(1, 1.0)]);
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let rows = LinearMap1d::bilinear_x2(3);
        let cols = LinearMap1d::bilinear_x2(4);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..48).map(|i| (i as f64 * 0.11).cos()).collect();
        let ax = apply_separable(&x, &rows, &cols);
        let atg = apply_separable_adjoint(&g, &rows, &cols);
        let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
