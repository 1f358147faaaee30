use nalgebra::{DMatrix, DVector};

use super::{FeatureMatrix, GlobalFeature, PyramidSpec, SpatialFeatureMap};
use crate::error::{Result, SfrError};

/// Per-channel mean over every spatial position.
pub fn global_average_pool(map: &SpatialFeatureMap) -> GlobalFeature {
    let plane = map.height() * map.width();
    let means = map
        .values()
        .chunks_exact(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64);
    GlobalFeature(DVector::from_iterator(map.channels(), means))
}

/// Spreads a gradient w.r.t. the global feature back over the map grid.
pub fn global_average_pool_backward(
    channels: usize,
    height: usize,
    width: usize,
    grad: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(grad.len(), channels);
    let plane = height * width;
    let scale = 1.0 / plane as f64;
    grad.iter()
        .flat_map(|g| std::iter::repeat_n(g * scale, plane))
        .collect()
}

/// Number of pooling windows a `height x width` map yields for `spec`.
pub fn pyramid_window_count(height: usize, width: usize, spec: &PyramidSpec) -> usize {
    spec.kernels()
        .iter()
        .filter(|&&k| k <= height.min(width))
        .map(|&k| windows_along(height, k, spec.stride()) * windows_along(width, k, spec.stride()))
        .sum()
}

#[inline]
fn windows_along(extent: usize, k: usize, stride: usize) -> usize {
    (extent - k) / stride + 1
}

/// Multi-scale spatial features: a sliding `k x k` mean for every kernel
/// that fits, concatenated kernel-ascending then row-major.
pub fn pyramid_pool(map: &SpatialFeatureMap, spec: &PyramidSpec) -> Result<FeatureMatrix> {
    let (c, h, w) = (map.channels(), map.height(), map.width());
    let count = pyramid_window_count(h, w, spec);
    if count == 0 {
        return Err(SfrError::EmptyPyramid {
            height: h,
            width: w,
        });
    }

    // Summed-area table per channel, (h+1) x (w+1) with a zero border.
    let sw = w + 1;
    let plane = (h + 1) * sw;
    let mut table = vec![0.0; c * plane];
    for ch in 0..c {
        let t = &mut table[ch * plane..(ch + 1) * plane];
        for r in 0..h {
            let mut row_sum = 0.0;
            for col in 0..w {
                row_sum += map.get(ch, r, col);
                t[(r + 1) * sw + col + 1] = t[r * sw + col + 1] + row_sum;
            }
        }
    }

    let stride = spec.stride();
    let mut out = DMatrix::zeros(c, count);
    let mut j = 0;
    for &k in spec.kernels().iter().filter(|&&k| k <= h.min(w)) {
        let area = (k * k) as f64;
        for wr in 0..windows_along(h, k, stride) {
            for wc in 0..windows_along(w, k, stride) {
                let (r0, c0) = (wr * stride, wc * stride);
                let (r1, c1) = (r0 + k, c0 + k);
                for ch in 0..c {
                    let t = &table[ch * plane..];
                    let s = t[r1 * sw + c1] - t[r0 * sw + c1] - t[r1 * sw + c0] + t[r0 * sw + c0];
                    out[(ch, j)] = s / area;
                }
                j += 1;
            }
        }
    }
    FeatureMatrix::new(out)
}

/// Adjoint of [`pyramid_pool`]: accumulates column gradients back onto the
/// map grid.
pub fn pyramid_pool_backward(
    channels: usize,
    height: usize,
    width: usize,
    spec: &PyramidSpec,
    grad: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let count = pyramid_window_count(height, width, spec);
    if grad.nrows() != channels || grad.ncols() != count {
        return Err(SfrError::DimensionMismatch(format!(
            "pyramid gradient is {}x{}, expected {channels}x{count}",
            grad.nrows(),
            grad.ncols()
        )));
    }
    let stride = spec.stride();
    let mut out = vec![0.0; channels * height * width];
    let mut j = 0;
    for &k in spec.kernels().iter().filter(|&&k| k <= height.min(width)) {
        let inv_area = 1.0 / (k * k) as f64;
        for wr in 0..windows_along(height, k, stride) {
            for wc in 0..windows_along(width, k, stride) {
                for ch in 0..channels {
                    let g = grad[(ch, j)] * inv_area;
                    if g == 0.0 {
                        continue;
                    }
                    for r in wr * stride..wr * stride + k {
                        let base = (ch * height + r) * width;
                        for v in &mut out[base + wc * stride..base + wc * stride + k] {
                            *v += g;
                        }
                    }
                }
                j += 1;
            }
        }
    }
    Ok(out)
}

/// Scales every nonzero column to unit length; zero columns stay zero and
/// are listed in [`FeatureMatrix::degenerate_columns`].
pub fn l2_normalize_columns(m: &FeatureMatrix) -> FeatureMatrix {
    let mut columns = m.matrix().clone();
    let mut degenerate = Vec::new();
    for (j, mut col) in columns.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            degenerate.push(j);
        } else {
            col /= norm;
        }
    }
    FeatureMatrix {
        columns,
        normalized: true,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> SpatialFeatureMap {
        let values = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        SpatialFeatureMap::new(c, h, w, values).unwrap()
    }

    // Naive reference: explicit window loops.
    fn window_mean(map: &SpatialFeatureMap, ch: usize, r0: usize, c0: usize, k: usize) -> f64 {
        let mut s = 0.0;
        for r in r0..r0 + k {
            for c in c0..c0 + k {
                s += map.get(ch, r, c);
            }
        }
        s / (k * k) as f64
    }

    #[test]
    fn gap_of_constant_map() {
        let m = SpatialFeatureMap::filled(3, 4, 5, 3.5).unwrap();
        assert_eq!(global_average_pool(&m).as_slice(), &[3.5, 3.5, 3.5]);
    }

    #[test]
    fn gap_single_channel() {
        let m = SpatialFeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_average_pool(&m).as_slice(), &[2.5]);
    }

    #[test]
    fn gap_two_channels_matches_loop() {
        let m = ramp(2, 3, 5);
        let g = global_average_pool(&m);
        for ch in 0..2 {
            let mut s = 0.0;
            for r in 0..3 {
                for c in 0..5 {
                    s += m.get(ch, r, c);
                }
            }
            assert!((g.as_slice()[ch] - s / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_counts() {
        let spec = PyramidSpec::default();
        assert_eq!(pyramid_pool(&ramp(3, 8, 4), &spec).unwrap().count(), 70);
        assert_eq!(pyramid_pool(&ramp(3, 4, 4), &spec).unwrap().count(), 30);
        assert_eq!(pyramid_pool(&ramp(3, 1, 1), &spec).unwrap().count(), 1);
    }

    #[test]
    fn pyramid_all_kernels_too_big() {
        let spec = PyramidSpec::new(vec![3, 4], 1).unwrap();
        assert!(matches!(
            pyramid_pool(&ramp(1, 2, 5), &spec),
            Err(SfrError::EmptyPyramid { height: 2, width: 5 })
        ));
    }

    #[test]
    fn pyramid_column_order_and_values() {
        let m = ramp(2, 5, 4);
        let spec = PyramidSpec::default();
        let x = pyramid_pool(&m, &spec).unwrap();
        let mut j = 0;
        for k in 1..=4 {
            for r0 in 0..=5 - k {
                for c0 in 0..=4 - k {
                    for ch in 0..2 {
                        let want = window_mean(&m, ch, r0, c0, k);
                        assert!((x.matrix()[(ch, j)] - want).abs() <= 1e-12 + 1e-6 * want.abs());
                    }
                    j += 1;
                }
            }
        }
        assert_eq!(j, x.count());
    }

    #[test]
    fn pyramid_with_stride_two() {
        let m = ramp(1, 6, 6);
        let spec = PyramidSpec::new(vec![2], 2).unwrap();
        let x = pyramid_pool(&m, &spec).unwrap();
        assert_eq!(x.count(), 9);
        assert!((x.matrix()[(0, 4)] - window_mean(&m, 0, 2, 2, 2)).abs() < 1e-12);
    }

    #[test]
    fn pyramid_backward_is_adjoint() {
        // <P(m), G> == <m, P^T(G)>
        let m = ramp(2, 5, 6);
        let spec = PyramidSpec::default();
        let x = pyramid_pool(&m, &spec).unwrap();
        let g = DMatrix::from_fn(2, x.count(), |i, j| ((i * 31 + j * 7) as f64).cos());
        let lhs = x.matrix().component_mul(&g).sum();
        let back = pyramid_pool_backward(2, 5, 6, &spec, &g).unwrap();
        let rhs: f64 = back.iter().zip(m.values()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn normalize_three_four_five() {
        let m = FeatureMatrix::from_columns(2, &[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let n = l2_normalize_columns(&m);
        assert!((n.matrix()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((n.matrix()[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(n.column(1), vec![0.0, 0.0]);
        assert_eq!(n.degenerate_columns(), &[1]);
        assert!(n.is_normalized());
    }

    #[test]
    fn normalize_unit_columns_unchanged() {
        let s = 0.5f64.sqrt();
        let m = FeatureMatrix::from_columns(2, &[vec![1.0, 0.0], vec![s, s]]).unwrap();
        let n = l2_normalize_columns(&m);
        assert!((n.matrix() - m.matrix()).amax() < 1e-12);
    }
}
