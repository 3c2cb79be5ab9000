//! Conventional DSM baseline: median-of-highest fusion, despiking, IDW fill.

use crate::raster::RasterGrid;
use crate::scene::GridSpec;
use crate::sensor::PointCloud;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    pub grid_spacing: f64,
    /// Side length of the despike window, cells. Must be odd.
    pub despike_window: usize,
    pub despike_threshold: f64,
    pub idw_power: f64,
    pub idw_max_neighbors: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            grid_spacing: 0.25,
            despike_window: 3,
            despike_threshold: 5.0,
            idw_power: 2.0,
            idw_max_neighbors: 12,
        }
    }
}

impl FusionConfig {
    fn validate(&self) -> Result<()> {
        if !(self.grid_spacing > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid spacing {} not positive",
                self.grid_spacing
            )));
        }
        if self.despike_window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "despike window {} must be odd",
                self.despike_window
            )));
        }
        if self.idw_max_neighbors == 0 {
            return Err(Error::InvalidConfig("idw neighbor count is zero".into()));
        }
        Ok(())
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of the `n` highest values. `heights` need not be sorted.
pub fn median_of_highest(heights: &[f64], n: usize) -> f64 {
    let mut v = heights.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = n.min(v.len());
    median_sorted(&v[v.len() - k..])
}

/// Cell-wise median of the n highest points, where n is the average number
/// of points per occupied cell. Empty cells stay nodata.
pub fn fuse_median(pc: &PointCloud, spec: &GridSpec, cfg: &FusionConfig) -> Result<RasterGrid> {
    cfg.validate()?;
    if pc.is_empty() {
        return Err(Error::EmptyPointSet("cannot fuse an empty cloud".into()));
    }
    let mut grid = spec.empty_grid()?;
    let nodata = grid.nodata();
    let (nr, nc) = grid.dims();
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); nr * nc];
    let mut n_in = 0usize;
    for p in &pc.points {
        if let Some((r, c)) = grid.world_to_cell(p[0], p[1]) {
            cells[r * nc + c].push(p[2]);
            n_in += 1;
        }
    }
    let occupied = cells.iter().filter(|c| !c.is_empty()).count();
    if occupied == 0 {
        return Err(Error::EmptyPointSet("no points fall inside the grid".into()));
    }
    let n = ((n_in as f64 / occupied as f64).round() as usize).max(1);
    for r in 0..nr {
        for c in 0..nc {
            let heights = &cells[r * nc + c];
            if heights.is_empty() {
                grid.set(r, c, nodata);
            } else {
                grid.set(r, c, median_of_highest(heights, n));
            }
        }
    }
    Ok(grid)
}

/// Replace cells deviating from their window median by more than the
/// threshold with that median. Nodata cells are left alone and excluded
/// from the window statistics.
pub fn despike(dsm: &RasterGrid, cfg: &FusionConfig) -> Result<RasterGrid> {
    cfg.validate()?;
    let mut out = dsm.clone();
    let (nr, nc) = dsm.dims();
    let half = (cfg.despike_window / 2) as isize;
    for r in 0..nr {
        for c in 0..nc {
            let v = dsm.get(r, c);
            if v == dsm.nodata() {
                continue;
            }
            let mut window = Vec::with_capacity(cfg.despike_window * cfg.despike_window);
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= nr as isize || cc >= nc as isize {
                        continue;
                    }
                    let w = dsm.get(rr as usize, cc as usize);
                    if w != dsm.nodata() {
                        window.push(w);
                    }
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = median_sorted(&window);
            if (v - med).abs() > cfg.despike_threshold {
                out.set(r, c, med);
            }
        }
    }
    Ok(out)
}

/// Fill every nodata cell with inverse distance weighted interpolation over
/// its nearest valid cells. Valid cells are untouched.
pub fn fill_idw(dsm: &RasterGrid, cfg: &FusionConfig) -> Result<RasterGrid> {
    cfg.validate()?;
    let (nr, nc) = dsm.dims();
    let any_valid = (0..nr).any(|r| (0..nc).any(|c| dsm.get(r, c) != dsm.nodata()));
    if !any_valid {
        return Err(Error::InvalidGrid("cannot fill an all-nodata grid".into()));
    }
    let mut out = dsm.clone();
    let k = cfg.idw_max_neighbors;
    for r in 0..nr {
        for c in 0..nc {
            if dsm.get(r, c) != dsm.nodata() {
                continue;
            }
            // Ring search by Chebyshev radius; once k candidates exist,
            // widen by sqrt(2) to catch closer Euclidean neighbors on the
            // diagonal, then keep the k nearest.
            let mut cand: Vec<(f64, f64)> = Vec::new();
            let max_rad = nr.max(nc) as isize;
            let mut stop_rad = max_rad;
            let mut rad = 1isize;
            while rad <= stop_rad.min(max_rad) {
                for dr in -rad..=rad {
                    for dc in -rad..=rad {
                        if dr.abs().max(dc.abs()) != rad {
                            continue;
                        }
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr < 0 || cc < 0 || rr >= nr as isize || cc >= nc as isize {
                            continue;
                        }
                        let v = dsm.get(rr as usize, cc as usize);
                        if v == dsm.nodata() {
                            continue;
                        }
                        let d2 = (dr * dr + dc * dc) as f64;
                        cand.push((d2, v));
                    }
                }
                if cand.len() >= k && stop_rad == max_rad {
                    stop_rad = (rad as f64 * std::f64::consts::SQRT_2).ceil() as isize;
                }
                rad += 1;
            }
            cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cand.truncate(k);
            let mut num = 0.0;
            let mut den = 0.0;
            for (d2, v) in &cand {
                let dist = d2.sqrt() * dsm.cell_size();
                let w = dist.powf(-cfg.idw_power);
                num += w * v;
                den += w;
            }
            out.set(r, c, num / den);
        }
    }
    Ok(out)
}

/// Full baseline pipeline: fuse, despike, fill.
pub fn conventional_dsm(pc: &PointCloud, spec: &GridSpec, cfg: &FusionConfig) -> Result<RasterGrid> {
    let fused = fuse_median(pc, spec, cfg)?;
    let clean = despike(&fused, cfg)?;
    fill_idw(&clean, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, render_reference_dsm, SceneConfig};
    use crate::sensor::{simulate_point_cloud, SensorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_1m(n: usize) -> GridSpec {
        GridSpec { origin_xy: (0.0, 0.0), cell_size: 1.0, n_rows: n, n_cols: n }
    }

    #[test]
    fn median_of_highest_matches_sort_oracle() {
        assert_eq!(median_of_highest(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3), 5.0);
        assert_eq!(median_of_highest(&[6.0, 1.0, 4.0, 2.0, 5.0, 3.0], 3), 5.0);
        assert_eq!(median_of_highest(&[7.5], 3), 7.5);
        assert_eq!(median_of_highest(&[1.0, 9.0], 4), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let n = rng.gen_range(1..12usize);
            let m = rng.gen_range(1..8usize);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let mut sorted = v.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let top: Vec<f64> = sorted[n.saturating_sub(m)..].to_vec();
            let expect = if top.len() % 2 == 1 {
                top[top.len() / 2]
            } else {
                0.5 * (top[top.len() / 2 - 1] + top[top.len() / 2])
            };
            assert_eq!(median_of_highest(&v, m), expect);
        }
    }

    #[test]
    fn single_point_cell_keeps_its_height() {
        let pc = PointCloud { points: vec![[0.5, 0.5, 12.25]] };
        let g = fuse_median(&pc, &spec_1m(2), &FusionConfig::default()).unwrap();
        let (r, c) = g.world_to_cell(0.5, 0.5).unwrap();
        assert_eq!(g.get(r, c), 12.25);
        assert_eq!(g.get(0, 0), g.nodata());
    }

    #[test]
    fn fused_cell_stays_within_contributing_heights() {
        let scene = generate_scene(6, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let pc = simulate_point_cloud(&scene, &SensorConfig { seed: 2, ..Default::default() })
            .unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, 0.5);
        let g = fuse_median(&pc, &spec, &FusionConfig::default()).unwrap();
        let (nr, nc) = g.dims();
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); nr * nc];
        for p in &pc.points {
            if let Some((r, c)) = g.world_to_cell(p[0], p[1]) {
                let b = &mut bounds[r * nc + c];
                b.0 = b.0.min(p[2]);
                b.1 = b.1.max(p[2]);
            }
        }
        for r in 0..nr {
            for c in 0..nc {
                let v = g.get(r, c);
                if v == g.nodata() {
                    continue;
                }
                let (lo, hi) = bounds[r * nc + c];
                assert!(v >= lo && v <= hi, "cell ({r},{c}) value {v} outside [{lo},{hi}]");
            }
        }
    }

    #[test]
    fn zero_noise_degenerate_scene_fuses_exactly() {
        let cfg = FusionConfig::default();
        let scene_cfg = SceneConfig::degenerate_flat((64.0, 64.0), cfg.grid_spacing);
        let scene = generate_scene(12, &scene_cfg).unwrap();
        let sensor = SensorConfig {
            density: 12.0,
            noise_sigma_z: 0.0,
            noise_sigma_xy: 0.0,
            outlier_fraction: 0.0,
            forest_extra_sigma: 0.0,
            seed: 3,
            ..Default::default()
        };
        let pc = simulate_point_cloud(&scene, &sensor).unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, cfg.grid_spacing);
        let fused = fuse_median(&pc, &spec, &cfg).unwrap();
        let (reference, _) = render_reference_dsm(&scene, &spec).unwrap();
        let (nr, nc) = fused.dims();
        let mut checked = 0usize;
        for r in 0..nr {
            for c in 0..nc {
                let v = fused.get(r, c);
                if v == fused.nodata() {
                    continue;
                }
                assert!(
                    (v - reference.get(r, c)).abs() < 1e-9,
                    "cell ({r},{c}): fused {v} vs reference {}",
                    reference.get(r, c)
                );
                checked += 1;
            }
        }
        assert!(checked > nr * nc / 2, "too few occupied cells: {checked}");
    }

    #[test]
    fn despike_leaves_constant_field_alone_and_flattens_spikes() {
        let cfg = FusionConfig::default();
        let mut g = spec_1m(9).empty_grid().unwrap();
        let (nr, nc) = g.dims();
        for r in 0..nr {
            for c in 0..nc {
                g.set(r, c, 2.0);
            }
        }
        let out = despike(&g, &cfg).unwrap();
        assert_eq!(out.values(), g.values());

        g.set(4, 4, 52.0);
        let out = despike(&g, &cfg).unwrap();
        assert_eq!(out.get(4, 4), 2.0);
        assert_eq!(out.get(4, 5), 2.0);
    }

    #[test]
    fn despiked_field_deviates_at_most_threshold_from_window_median() {
        let cfg = FusionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = spec_1m(24).empty_grid().unwrap();
        for r in 0..24 {
            for c in 0..24 {
                let v = if rng.gen::<f64>() < 0.1 {
                    rng.gen_range(-100.0..100.0)
                } else {
                    rng.gen_range(-1.0..1.0)
                };
                g.set(r, c, v);
            }
        }
        let out = despike(&g, &cfg).unwrap();
        // Post-condition: every output cell is the input or its window median,
        // and accepted inputs were within the threshold.
        for r in 0..24 {
            for c in 0..24 {
                let v = out.get(r, c);
                let mut window = Vec::new();
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if (0..24).contains(&rr) && (0..24).contains(&cc) {
                            window.push(g.get(rr as usize, cc as usize));
                        }
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med = median_sorted(&window);
                if v != g.get(r, c) {
                    assert_eq!(v, med);
                } else {
                    assert!((v - med).abs() <= cfg.despike_threshold);
                }
            }
        }
        // Idempotence on the despiked output.
        let again = despike(&out, &cfg).unwrap();
        let max_change = out
            .values()
            .iter()
            .zip(again.values().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_change <= cfg.despike_threshold, "second pass moved {max_change}");
    }

    #[test]
    fn idw_fill_handles_reference_cases() {
        let cfg = FusionConfig::default();
        // Hole surrounded by constant 7.
        let mut g = spec_1m(3).empty_grid().unwrap();
        for r in 0..3 {
            for c in 0..3 {
                g.set(r, c, 7.0);
            }
        }
        g.set(1, 1, g.nodata());
        let out = fill_idw(&g, &cfg).unwrap();
        assert!((out.get(1, 1) - 7.0).abs() < 1e-12);

        // Hole equidistant from 2 and 4.
        let mut g = spec_1m(3).empty_grid().unwrap();
        let nodata = g.nodata();
        for r in 0..3 {
            for c in 0..3 {
                g.set(r, c, nodata);
            }
        }
        g.set(1, 0, 2.0);
        g.set(1, 2, 4.0);
        let out = fill_idw(&g, &cfg).unwrap();
        assert!((out.get(1, 1) - 3.0).abs() < 1e-12);

        // Distances 1 and 2 from values 0 and 3, power 2:
        // (0*1 + 3*0.25) / 1.25 = 0.6.
        let mut g = spec_1m(5).empty_grid().unwrap();
        for r in 0..5 {
            for c in 0..5 {
                g.set(r, c, nodata);
            }
        }
        g.set(2, 1, 0.0);
        g.set(2, 4, 3.0);
        let out = fill_idw(&g, &cfg).unwrap();
        assert!((out.get(2, 2) - 0.6).abs() < 1e-12, "got {}", out.get(2, 2));
    }

    #[test]
    fn idw_fill_respects_neighbor_bounds_and_valid_cells() {
        let cfg = FusionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = spec_1m(20).empty_grid().unwrap();
        let nodata = g.nodata();
        for r in 0..20 {
            for c in 0..20 {
                if rng.gen::<f64>() < 0.3 {
                    g.set(r, c, nodata);
                } else {
                    g.set(r, c, rng.gen_range(0.0..50.0));
                }
            }
        }
        let out = fill_idw(&g, &cfg).unwrap();
        let (lo, hi) = g
            .values()
            .iter()
            .filter(|v| **v != nodata)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        for r in 0..20 {
            for c in 0..20 {
                let v = out.get(r, c);
                assert!(v != nodata);
                if g.get(r, c) != nodata {
                    assert_eq!(v, g.get(r, c));
                } else {
                    assert!(v >= lo && v <= hi);
                }
            }
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        let cfg = FusionConfig::default();
        let empty = PointCloud { points: vec![] };
        assert!(fuse_median(&empty, &spec_1m(4), &cfg).is_err());
        let g = spec_1m(4).empty_grid().unwrap();
        let mut all_nodata = g.clone();
        let nodata = all_nodata.nodata();
        for r in 0..4 {
            for c in 0..4 {
                all_nodata.set(r, c, nodata);
            }
        }
        assert!(fill_idw(&all_nodata, &cfg).is_err());
        let bad = FusionConfig { despike_window: 4, ..cfg };
        assert!(despike(&g, &bad).is_err());
    }
}
