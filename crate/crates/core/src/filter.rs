//! Structure-preserving adaptive filtering of a semi-dense inverse-depth map.
//!
//! Each valid pixel is replaced by a weighted mean over its square window,
//! with four multiplicative kernels: photometric similarity, spatial
//! closeness, consistency of depth ratios with the corrected prediction, and
//! the neighbour's own uncertainty. The variance is then re-estimated from
//! the weighted spread inside the window, pixels whose variance reaches
//! `gamma` are dropped, and finally the variance is rescaled so its mean
//! matches the input's.

use rayon::prelude::*;

use crate::error::FilterError;
use crate::scalar::Real;
use crate::types::{FusionConfig, GrayImage, InverseDepthMap, Keyframe, Pixel, VarianceMap};

/// The four kernel values for one (centre, neighbour) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterWeights<T> {
    pub w_s: T,
    pub w_d: T,
    pub w_c: T,
    pub w_u: T,
}

impl<T: Real> FilterWeights<T> {
    #[inline]
    pub fn product(&self) -> T {
        self.w_s * self.w_d * self.w_c * self.w_u
    }
}

/// Borrowed inputs of the filter.
#[derive(Clone, Copy, Debug)]
pub struct FilterInput<'a, T> {
    pub image: &'a GrayImage<T>,
    pub semi_dense: &'a InverseDepthMap<T>,
    pub variance: &'a VarianceMap<T>,
    /// Scale/shift-corrected prediction.
    pub cnn_corrected: &'a InverseDepthMap<T>,
}

impl<'a, T: Real> FilterInput<'a, T> {
    pub fn new(kf: &'a Keyframe<T>, cnn_corrected: &'a InverseDepthMap<T>) -> Self {
        Self {
            image: &kf.image,
            semi_dense: &kf.semi_dense,
            variance: &kf.semi_dense_var,
            cnn_corrected,
        }
    }

    #[inline]
    fn usable(&self, x: usize, y: usize) -> bool {
        self.semi_dense.get(x, y) > T::zero() && self.cnn_corrected.get(x, y) > T::zero()
    }
}

/// Filtered inverse depth with its re-estimated variance.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredDepth<T> {
    pub depth: InverseDepthMap<T>,
    pub variance: VarianceMap<T>,
}

/// Kernel weights between `center` and `neighbor`. Both must be valid in the
/// semi-dense and corrected maps.
pub fn kernel_weights<T: Real>(
    center: Pixel,
    neighbor: Pixel,
    input: &FilterInput<'_, T>,
    cfg: &FusionConfig<T>,
) -> FilterWeights<T> {
    let two = T::lit(2.0);
    let (cx, cy) = center;
    let (nx, ny) = neighbor;

    let di = input.image.get(cx, cy) - input.image.get(nx, ny);
    let w_s = (-(di * di) / (two * cfg.sigma_s * cfg.sigma_s)).exp();

    let dx = T::from_count(cx) - T::from_count(nx);
    let dy = T::from_count(cy) - T::from_count(ny);
    let w_d = (-(dx * dx + dy * dy) / (two * cfg.sigma_d * cfg.sigma_d)).exp();

    let d_c = input.semi_dense.get(cx, cy);
    let d_n = input.semi_dense.get(nx, ny);
    let ratio = d_c / d_n - input.cnn_corrected.get(cx, cy) / input.cnn_corrected.get(nx, ny);
    let w_c = (-(ratio * ratio) / (two * cfg.sigma_c * cfg.sigma_c)).exp();

    let d4 = d_n.max(cfg.min_inverse_depth).powi(4);
    let w_u = (-(cfg.sigma_u * input.variance.get(nx, ny)) / d4).exp();

    FilterWeights { w_s, w_d, w_c, w_u }
}

/// Filtered depth and re-estimated variance at one centre pixel, before
/// thresholding. `None` if the centre is not usable.
fn filter_pixel<T: Real>(
    x: usize,
    y: usize,
    input: &FilterInput<'_, T>,
    cfg: &FusionConfig<T>,
) -> Option<(T, T)> {
    if !input.usable(x, y) {
        return None;
    }
    let (w, h) = input.semi_dense.dims();
    let r = cfg.window_radius;
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));

    let mut weight_sum = T::zero();
    let mut value_sum = T::zero();
    let mut n_valid = 0usize;
    // Weights are needed twice; a 5×5 window fits on the stack comfortably
    // but the radius is configurable.
    let mut taps: Vec<(T, T)> = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for ny in y0..=y1 {
        for nx in x0..=x1 {
            if !input.usable(nx, ny) {
                continue;
            }
            let wt = kernel_weights((x, y), (nx, ny), input, cfg).product();
            let d = input.semi_dense.get(nx, ny);
            weight_sum += wt;
            value_sum += wt * d;
            n_valid += 1;
            taps.push((wt, d));
        }
    }
    // The centre always contributes with weight w_u(x) > 0 unless it
    // underflows; fall back to the raw value in that case.
    if !(weight_sum > T::zero()) {
        return Some((input.semi_dense.get(x, y), T::zero()));
    }
    let filtered = value_sum / weight_sum;
    let mut spread = T::zero();
    for (wt, d) in taps {
        let e = filtered - d;
        spread += wt * e * e;
    }
    let window_size = T::from_count((2 * r + 1) * (2 * r + 1));
    let variance = window_size / T::from_count(n_valid) * spread / weight_sum;
    Some((filtered, variance))
}

/// Weighted-average filter with variance re-estimation and `gamma`
/// thresholding. Rows are processed in parallel; every output pixel depends
/// only on inputs so the result is independent of scheduling.
pub fn adaptive_filter<T: Real>(
    input: &FilterInput<'_, T>,
    cfg: &FusionConfig<T>,
) -> FilteredDepth<T> {
    let (w, h) = input.semi_dense.dims();
    let rows: Vec<Vec<(T, T)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| match filter_pixel(x, y, input, cfg) {
                    Some((d, v)) if v < cfg.gamma => (d, v),
                    _ => (T::zero(), T::zero()),
                })
                .collect()
        })
        .collect();
    let mut depth = Vec::with_capacity(w * h);
    let mut variance = Vec::with_capacity(w * h);
    for row in rows {
        for (d, v) in row {
            depth.push(d);
            variance.push(v);
        }
    }
    FilteredDepth {
        depth: InverseDepthMap::from_vec(w, h, depth),
        variance: VarianceMap::from_vec(w, h, variance),
    }
}

fn masked_mean<T: Real>(values: &VarianceMap<T>, mask: &InverseDepthMap<T>) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for (&v, &m) in values.as_slice().iter().zip(mask.as_slice()) {
        if m > T::zero() {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / T::from_count(n))
}

/// Rescales `filtered.variance` so that its mean over the filtered valid set
/// equals the mean of `original_var` over `original_depth`'s valid set.
///
/// On [`FilterError::ZeroMeanVariance`] callers should keep the unscaled
/// variance.
pub fn rescale_variance<T: Real>(
    filtered: &FilteredDepth<T>,
    original_depth: &InverseDepthMap<T>,
    original_var: &VarianceMap<T>,
) -> Result<VarianceMap<T>, FilterError> {
    let mean_f =
        masked_mean(&filtered.variance, &filtered.depth).ok_or(FilterError::NoValidPixel)?;
    let mean_o = masked_mean(original_var, original_depth).ok_or(FilterError::NoValidPixel)?;
    if mean_f == T::zero() {
        return Err(FilterError::ZeroMeanVariance);
    }
    let ratio = mean_o / mean_f;
    Ok(filtered
        .variance
        .map(|v| v * ratio)
        .masked_by(&filtered.depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Maps {
        image: Grid<f64>,
        semi: Grid<f64>,
        var: Grid<f64>,
        cnn: Grid<f64>,
    }

    impl Maps {
        fn input(&self) -> FilterInput<'_, f64> {
            FilterInput {
                image: &self.image,
                semi_dense: &self.semi,
                variance: &self.var,
                cnn_corrected: &self.cnn,
            }
        }
    }

    fn constant(w: usize, h: usize, d: f64) -> Maps {
        Maps {
            image: Grid::filled(w, h, 100.0),
            semi: Grid::filled(w, h, d),
            var: Grid::filled(w, h, 0.0),
            cnn: Grid::filled(w, h, d),
        }
    }

    /// Direct transcription of the weighted mean and the window variance.
    fn brute_force(m: &Maps, cfg: &FusionConfig<f64>, x: usize, y: usize) -> (f64, f64) {
        let r = cfg.window_radius as i64;
        let mut taps = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= m.semi.width() as i64 || ny >= m.semi.height() as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if m.semi.get(nx, ny) <= 0.0 || m.cnn.get(nx, ny) <= 0.0 {
                    continue;
                }
                let ws = (-(m.image.get(x, y) - m.image.get(nx, ny)).powi(2)
                    / (2.0 * cfg.sigma_s.powi(2)))
                .exp();
                let wd = (-((dx * dx + dy * dy) as f64) / (2.0 * cfg.sigma_d.powi(2))).exp();
                let rs = m.semi.get(x, y) / m.semi.get(nx, ny);
                let rc = m.cnn.get(x, y) / m.cnn.get(nx, ny);
                let wc = (-(rs - rc).powi(2) / (2.0 * cfg.sigma_c.powi(2))).exp();
                let wu = (-cfg.sigma_u * m.var.get(nx, ny) / m.semi.get(nx, ny).powi(4)).exp();
                taps.push((ws * wd * wc * wu, m.semi.get(nx, ny)));
            }
        }
        let wsum: f64 = taps.iter().map(|t| t.0).sum();
        let d = taps.iter().map(|t| t.0 * t.1).sum::<f64>() / wsum;
        let n = ((2 * r + 1) * (2 * r + 1)) as f64;
        let v = n / taps.len() as f64 * taps.iter().map(|t| t.0 * (d - t.1).powi(2)).sum::<f64>()
            / wsum;
        (d, v)
    }

    #[test]
    fn zero_exponents_give_unit_weights() {
        let m = constant(5, 5, 0.5);
        let w = kernel_weights((2, 2), (2, 2), &m.input(), &FusionConfig::default());
        assert_eq!(
            w,
            FilterWeights {
                w_s: 1.0,
                w_d: 1.0,
                w_c: 1.0,
                w_u: 1.0
            }
        );
    }

    #[test]
    fn spatial_kernel_at_distance_two() {
        let m = constant(5, 5, 0.5);
        let w = kernel_weights((2, 2), (4, 2), &m.input(), &FusionConfig::default());
        assert!((w.w_d - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w.w_d - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn zero_variance_gives_unit_uncertainty_weight() {
        let mut m = constant(5, 5, 0.5);
        m.semi.set(1, 1, 3.0);
        m.var.set(3, 3, 0.0);
        for p in [(1, 1), (3, 3)] {
            let w = kernel_weights((2, 2), p, &m.input(), &FusionConfig::default());
            assert_eq!(w.w_u, 1.0);
        }
    }

    #[test]
    fn constant_patch_is_unchanged() {
        let m = constant(7, 6, 0.8);
        let out = adaptive_filter(&m.input(), &FusionConfig::default());
        assert_eq!(out.depth.valid_count(), 42);
        for (x, y, d) in out.depth.pixels() {
            assert!((d - 0.8).abs() < 1e-15, "({x},{y})");
            assert!(out.variance.get(x, y).abs() < 1e-20);
        }
    }

    #[test]
    fn outlier_neighbor_is_suppressed() {
        let mut m = constant(5, 5, 0.5);
        m.semi.set(3, 2, 2.5);
        let cfg = FusionConfig::default();
        let (d, _) = filter_pixel(2, 2, &m.input(), &cfg).unwrap();
        assert!((d - 0.5).abs() / 0.5 < 0.01, "{d}");
        let (bd, bv) = brute_force(&m, &cfg, 2, 2);
        let (_, v) = filter_pixel(2, 2, &m.input(), &cfg).unwrap();
        assert!((d - bd).abs() < 1e-12);
        assert!((v - bv).abs() < 1e-12);
    }

    #[test]
    fn isolated_pixel_passes_through() {
        let mut m = constant(5, 5, 0.5);
        m.semi = Grid::filled(5, 5, 0.0);
        m.semi.set(2, 2, 0.7);
        m.var.set(2, 2, 1e-4);
        let out = adaptive_filter(&m.input(), &FusionConfig::default());
        assert_eq!(out.depth.get(2, 2), 0.7);
        assert_eq!(out.variance.get(2, 2), 0.0);
        assert_eq!(out.depth.valid_count(), 1);
    }

    fn random_maps(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Maps {
        let semi = Grid::from_fn(w, h, |_, _| {
            if rng.random_bool(0.6) {
                rng.random_range(0.3..1.5)
            } else {
                0.0
            }
        });
        let var = semi.map(|d| if d > 0.0 { 1e-4 } else { 0.0 });
        Maps {
            image: Grid::from_fn(w, h, |_, _| rng.random_range(0.0..255.0)),
            cnn: Grid::from_fn(w, h, |_, _| rng.random_range(0.3..1.5)),
            semi,
            var,
        }
    }

    #[test]
    fn random_maps_match_brute_force_and_stay_in_window_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut cfg = FusionConfig::default();
        cfg.gamma = 1e9;
        for _ in 0..5 {
            let m = random_maps(&mut rng, 16, 12);
            let out = adaptive_filter(&m.input(), &cfg);
            for (x, y, d) in out.depth.pixels() {
                if m.semi.get(x, y) <= 0.0 {
                    assert_eq!(d, 0.0);
                    continue;
                }
                let (bd, bv) = brute_force(&m, &cfg, x, y);
                assert!((d - bd).abs() < 1e-12);
                assert!((out.variance.get(x, y) - bv).abs() < 1e-12);
                assert!(out.variance.get(x, y) >= 0.0);
                let (mut lo, mut hi) = (f64::MAX, f64::MIN);
                for ny in y.saturating_sub(2)..=(y + 2).min(11) {
                    for nx in x.saturating_sub(2)..=(x + 2).min(15) {
                        let v = m.semi.get(nx, ny);
                        if v > 0.0 {
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
                assert!(d >= lo - 1e-15 && d <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn gamma_threshold_only_removes_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_maps(&mut rng, 20, 20);
        let out = adaptive_filter(&m.input(), &FusionConfig::default());
        for (x, y, d) in out.depth.pixels() {
            if d > 0.0 {
                assert!(m.semi.get(x, y) > 0.0);
                assert!(out.variance.get(x, y) < 0.0025);
            } else {
                assert_eq!(out.variance.get(x, y), 0.0);
            }
        }
        assert!(out.depth.valid_count() < m.semi.valid_count());
    }

    #[test]
    fn filter_is_idempotent_on_constant_regions() {
        let m = constant(9, 9, 1.2);
        let cfg = FusionConfig::default();
        let once = adaptive_filter(&m.input(), &cfg);
        let again = Maps {
            semi: once.depth.clone(),
            var: once.variance.clone(),
            ..constant(9, 9, 1.2)
        };
        let twice = adaptive_filter(&again.input(), &cfg);
        assert_eq!(once.depth.valid_count(), twice.depth.valid_count());
        for (a, b) in once.depth.as_slice().iter().zip(twice.depth.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rescale_cases() {
        let depth = Grid::<f64>::from_vec(4, 1, vec![0.5, 0.6, 0.0, 0.7]);
        let orig = Grid::from_vec(4, 1, vec![1e-4, 2e-4, 0.0, 3e-4]);
        let same = FilteredDepth {
            depth: depth.clone(),
            variance: orig.clone(),
        };
        assert_eq!(rescale_variance(&same, &depth, &orig).unwrap(), orig);

        let doubled = FilteredDepth {
            depth: depth.clone(),
            variance: orig.map(|v| 2.0 * v),
        };
        let back = rescale_variance(&doubled, &depth, &orig).unwrap();
        for (a, b) in back.as_slice().iter().zip(orig.as_slice()) {
            assert!((a - b).abs() < 1e-18);
        }

        let zero = FilteredDepth {
            depth: depth.clone(),
            variance: Grid::filled(4, 1, 0.0),
        };
        assert_eq!(
            rescale_variance(&zero, &depth, &orig),
            Err(FilterError::ZeroMeanVariance)
        );
    }

    #[test]
    fn rescaled_mean_matches_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let depth = Grid::from_fn(30, 20, |_, _| {
                if rng.random_bool(0.5) {
                    rng.random_range(0.1..2.0)
                } else {
                    0.0
                }
            });
            let fvar = depth.map(|d| {
                if d > 0.0 {
                    rng.random_range(0.0..1e-3)
                } else {
                    0.0
                }
            });
            let odepth = Grid::from_fn(30, 20, |_, _| if rng.random_bool(0.7) { 1.0 } else { 0.0 });
            let ovar = odepth.map(|d| {
                if d > 0.0 {
                    rng.random_range(1e-5..1e-2)
                } else {
                    0.0
                }
            });
            let filtered = FilteredDepth {
                depth,
                variance: fvar,
            };
            let out = rescale_variance(&filtered, &odepth, &ovar).unwrap();
            let mean = |v: &Grid<f64>, m: &Grid<f64>| {
                let sel: Vec<f64> = v
                    .pixels()
                    .filter(|p| m.get(p.0, p.1) > 0.0)
                    .map(|p| p.2)
                    .collect();
                sel.iter().sum::<f64>() / sel.len() as f64
            };
            assert!((mean(&out, &filtered.depth) - mean(&ovar, &odepth)).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_filter_runs() {
        let m = constant(6, 6, 0.5);
        let image = m.image.cast::<f32>();
        let semi = m.semi.cast::<f32>();
        let var = m.var.cast::<f32>();
        let cnn = m.cnn.cast::<f32>();
        let input = FilterInput {
            image: &image,
            semi_dense: &semi,
            variance: &var,
            cnn_corrected: &cnn,
        };
        let out = adaptive_filter(&input, &FusionConfig::<f32>::default());
        assert_eq!(out.depth.valid_count(), 36);
    }
}
