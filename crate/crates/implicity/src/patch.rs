//! Patch windows and coordinate normalization.
//!
//! A training/inference patch is a square window in world coordinates.
//! Horizontal coordinates are shifted/scaled into [0, 1]; heights are
//! centered on the patch median and rescaled by a global factor estimated
//! from the training region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_PATCH_SIDE: f64 = 64.0;

/// A square patch window with its vertical normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchWindow {
    pub origin_xy: (f64, f64),
    pub side: f64,
    /// Patch median height, subtracted before vertical rescaling.
    pub z_center: f64,
    /// Global vertical scale factor (meters).
    pub z_scale: f64,
}

impl PatchWindow {
    pub fn new(origin_xy: (f64, f64), side: f64, z_center: f64, z_scale: f64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(Error::InvalidConfig(format!("patch side {side} must be > 0")));
        }
        if z_scale.abs() < 1e-6 {
            return Err(Error::DegenerateScale(z_scale));
        }
        Ok(PatchWindow { origin_xy, side, z_center, z_scale })
    }

    /// Window with z_center set to the median of the given heights.
    pub fn from_heights(
        origin_xy: (f64, f64),
        side: f64,
        heights: &[f64],
        z_scale: f64,
    ) -> Result<Self> {
        if heights.is_empty() {
            return Err(Error::EmptyPointSet(
                "patch z-centering needs at least one height".into(),
            ));
        }
        Self::new(origin_xy, side, median(heights), z_scale)
    }

    pub fn xy_scale(&self) -> f64 {
        1.0 / self.side
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.origin_xy.0
            && x <= self.origin_xy.0 + self.side
            && y >= self.origin_xy.1
            && y <= self.origin_xy.1 + self.side
    }

    pub fn normalize_xy(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_xy.0) / self.side,
            (y - self.origin_xy.1) / self.side,
        )
    }

    pub fn denormalize_xy(&self, nx: f64, ny: f64) -> (f64, f64) {
        (
            self.origin_xy.0 + nx * self.side,
            self.origin_xy.1 + ny * self.side,
        )
    }

    pub fn normalize_z(&self, z: f64) -> f64 {
        (z - self.z_center) / self.z_scale
    }

    pub fn denormalize_z(&self, nz: f64) -> f64 {
        self.z_center + nz * self.z_scale
    }

    pub fn normalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        let (nx, ny) = self.normalize_xy(p[0], p[1]);
        [nx, ny, self.normalize_z(p[2])]
    }

    pub fn denormalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        let (x, y) = self.denormalize_xy(p[0], p[1]);
        [x, y, self.denormalize_z(p[2])]
    }

    pub fn normalize_points(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|&p| self.normalize_point(p)).collect()
    }
}

/// Median; even-length inputs average the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rectangular training region in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct RegionRect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RegionRect {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Estimate the global vertical scale: draw random patch windows in the
/// training region, take the standard deviation of the heights in each,
/// crop the per-patch values to the 5th..95th percentile, and average the
/// rest.
pub fn compute_global_z_scale(
    points: &[[f64; 3]],
    region: &RegionRect,
    side: f64,
    n_patches: usize,
    seed: u64,
) -> Result<f64> {
    const MIN_POINTS_PER_PATCH: usize = 8;
    const MIN_USABLE: usize = 100;
    if region.width() < side || region.height() < side {
        return Err(Error::InvalidConfig(format!(
            "region {}x{} smaller than patch side {side}",
            region.width(),
            region.height()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stds = Vec::with_capacity(n_patches);
    let mut heights = Vec::new();
    for _ in 0..n_patches {
        let ox = region.x_min + rng.gen::<f64>() * (region.width() - side);
        let oy = region.y_min + rng.gen::<f64>() * (region.height() - side);
        heights.clear();
        for p in points {
            if p[0] >= ox && p[0] <= ox + side && p[1] >= oy && p[1] <= oy + side {
                heights.push(p[2]);
            }
        }
        if heights.len() < MIN_POINTS_PER_PATCH {
            continue;
        }
        let n = heights.len() as f64;
        let mean = heights.iter().sum::<f64>() / n;
        let var = heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
        stds.push(var.sqrt());
    }
    if stds.len() < MIN_USABLE {
        return Err(Error::TooFewPatches { got: stds.len(), need: MIN_USABLE });
    }
    stds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = (stds.len() as f64 * 0.05).floor() as usize;
    let hi = (stds.len() as f64 * 0.95).ceil() as usize;
    let kept = &stds[lo..hi.min(stds.len())];
    let scale = kept.iter().sum::<f64>() / kept.len() as f64;
    if scale < 1e-6 {
        return Err(Error::DegenerateScale(scale));
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn direct_z_formula() {
        let w = PatchWindow::new((0.0, 0.0), 64.0, 4.0, 2.0).unwrap();
        assert_eq!(w.normalize_z(2.0), -1.0);
        assert_eq!(w.normalize_z(4.0), 0.0);
        assert_eq!(w.normalize_z(6.0), 1.0);
    }

    #[test]
    fn window_origin_maps_to_zero() {
        let w = PatchWindow::new((120.0, -40.0), 64.0, 0.0, 1.0).unwrap();
        assert_eq!(w.normalize_xy(120.0, -40.0), (0.0, 0.0));
        assert_eq!(w.normalize_xy(120.0 + 64.0, -40.0 + 64.0), (1.0, 1.0));
    }

    #[test]
    fn median_from_heights_and_empty_error() {
        let w = PatchWindow::from_heights((0.0, 0.0), 64.0, &[2.0, 6.0, 4.0], 2.0).unwrap();
        assert_eq!(w.z_center, 4.0);
        assert!(PatchWindow::from_heights((0.0, 0.0), 64.0, &[], 2.0).is_err());
    }

    #[test]
    fn degenerate_scale_rejected() {
        assert!(matches!(
            PatchWindow::new((0.0, 0.0), 64.0, 0.0, 1e-9),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn roundtrip_1000_random_points() {
        let w = PatchWindow::new((37.5, -12.25), 64.0, 411.3, 5.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut max_dev: f64 = 0.0;
        for _ in 0..1000 {
            let p = [
                37.5 + rng.gen::<f64>() * 64.0,
                -12.25 + rng.gen::<f64>() * 64.0,
                380.0 + rng.gen::<f64>() * 60.0,
            ];
            let q = w.denormalize_point(w.normalize_point(p));
            for k in 0..3 {
                max_dev = max_dev.max((q[k] - p[k]).abs());
            }
        }
        assert!(max_dev < 1e-9 * 64.0, "round-trip deviation {max_dev}");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
        #[test]
        fn normalization_is_bijective(
            x in -1e4f64..1e4, y in -1e4f64..1e4, z in -1e3f64..1e3,
            ox in -1e3f64..1e3, oy in -1e3f64..1e3,
            zc in -100f64..100.0, zs in 0.5f64..50.0,
        ) {
            let w = PatchWindow::new((ox, oy), 64.0, zc, zs).unwrap();
            let p = w.denormalize_point(w.normalize_point([x, y, z]));
            prop_assert!((p[0] - x).abs() <= 1e-9 * x.abs().max(64.0));
            prop_assert!((p[1] - y).abs() <= 1e-9 * y.abs().max(64.0));
            prop_assert!((p[2] - z).abs() <= 1e-9 * z.abs().max(zs.abs()).max(zc.abs()));
        }
        }
    }

    fn synthetic_patch_points(sigmas: &[f64], seed: u64) -> Vec<[f64; 3]> {
        // Tile the region into 64 m cells, each filled with points whose
        // heights have one of the given standard deviations.
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let tiles = 10usize;
        for ty in 0..tiles {
            for tx in 0..tiles {
                let sigma = sigmas[(ty * tiles + tx) % sigmas.len()];
                let normal = Normal::new(0.0, sigma.max(1e-12)).unwrap();
                for _ in 0..40 {
                    let x = tx as f64 * 64.0 + rng.gen::<f64>() * 64.0;
                    let y = ty as f64 * 64.0 + rng.gen::<f64>() * 64.0;
                    let z = if sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    pts.push([x, y, z]);
                }
            }
        }
        pts
    }

    #[test]
    fn z_scale_flat_region_is_degenerate() {
        let pts = synthetic_patch_points(&[0.0], 7);
        let region = RegionRect { x_min: 0.0, y_min: 0.0, x_max: 640.0, y_max: 640.0 };
        assert!(matches!(
            compute_global_z_scale(&pts, &region, 64.0, 500, 1),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn z_scale_mixture_of_sigmas() {
        // Equal mix of sigma=1 and sigma=3 tiles: expected scale ~ 2.
        let pts = synthetic_patch_points(&[1.0, 3.0], 11);
        let region = RegionRect { x_min: 0.0, y_min: 0.0, x_max: 640.0, y_max: 640.0 };
        let s = compute_global_z_scale(&pts, &region, 64.0, 2000, 2).unwrap();
        // Patches straddling tile borders mix the two populations, which
        // pulls the average off 2.0 by a bounded amount.
        assert!((s - 2.0).abs() < 0.25, "scale {s}");
    }

    #[test]
    fn percentile_crop_suppresses_outlier_patches() {
        let clean = synthetic_patch_points(&[1.0, 3.0], 13);
        let region = RegionRect { x_min: 0.0, y_min: 0.0, x_max: 640.0, y_max: 640.0 };
        let s_clean = compute_global_z_scale(&clean, &region, 64.0, 2000, 5).unwrap();

        // Inject a few tiles of sigma=100 "outlier" patches (< 5% of area).
        let mut dirty = clean.clone();
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let wild = Normal::new(0.0, 100.0).unwrap();
        // Confined to a corner strip so that well under 5% of random
        // windows touch any outlier point.
        for _ in 0..120 {
            let x = rng.gen::<f64>() * 128.0;
            let y = 600.0 + rng.gen::<f64>() * 40.0;
            dirty.push([x, y, wild.sample(&mut rng)]);
        }
        let s_dirty = compute_global_z_scale(&dirty, &region, 64.0, 2000, 5).unwrap();
        assert!(
            (s_dirty - s_clean).abs() / s_clean < 0.02,
            "clean {s_clean} vs dirty {s_dirty}"
        );
    }

    #[test]
    fn z_scale_too_few_patches() {
        let pts = vec![[1.0, 1.0, 0.5]];
        let region = RegionRect { x_min: 0.0, y_min: 0.0, x_max: 128.0, y_max: 128.0 };
        assert!(matches!(
            compute_global_z_scale(&pts, &region, 64.0, 200, 1),
            Err(Error::TooFewPatches { .. })
        ));
    }
}
