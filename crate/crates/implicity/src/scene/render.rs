//! Reference DSM, mask rasterization, and synthetic ortho-image rendering.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::RasterGrid;
use crate::{Error, Result};

use super::SceneModel;

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub origin_xy: (f64, f64),
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridSpec {
    pub fn covering(origin_xy: (f64, f64), width: f64, height: f64, cell_size: f64) -> GridSpec {
        GridSpec {
            origin_xy,
            cell_size,
            n_rows: (height / cell_size).round() as usize,
            n_cols: (width / cell_size).round() as usize,
        }
    }

    pub fn empty_grid(&self) -> Result<RasterGrid> {
        RasterGrid::new(self.origin_xy, self.cell_size, self.n_rows, self.n_cols, 0.0, -9999.0)
    }
}

/// Exact rasterizations of footprints and regions; 1.0 inside, 0.0 outside.
#[derive(Debug, Clone)]
pub struct SceneMasks {
    pub building: RasterGrid,
    pub terrain: RasterGrid,
    pub forest: RasterGrid,
    pub water: RasterGrid,
}

/// Render the analytic surface at cell centers, plus the class masks.
pub fn render_reference_dsm(scene: &SceneModel, spec: &GridSpec) -> Result<(RasterGrid, SceneMasks)> {
    let mut dsm = spec.empty_grid()?;
    let mut building = spec.empty_grid()?;
    let mut terrain = spec.empty_grid()?;
    let mut forest = spec.empty_grid()?;
    let mut water = spec.empty_grid()?;
    for r in 0..spec.n_rows {
        for c in 0..spec.n_cols {
            let (x, y) = dsm.cell_to_world(r, c);
            dsm.set(r, c, scene.surface_height(x, y));
            let is_building = scene.building_at(x, y).is_some();
            building.set(r, c, f64::from(is_building));
            terrain.set(r, c, f64::from(!is_building));
            if !is_building {
                forest.set(r, c, f64::from(scene.in_forest(x, y)));
                water.set(r, c, f64::from(scene.in_water(x, y)));
            }
        }
    }
    Ok((dsm, SceneMasks { building, terrain, forest, water }))
}

/// Two co-registered panchromatic ortho-images over the same window.
#[derive(Debug, Clone)]
pub struct OrthoPair {
    pub a: RasterGrid,
    pub b: RasterGrid,
}

#[derive(Debug, Clone, Copy)]
pub struct OrthoConfig {
    /// Sun direction: azimuth measured counterclockwise from +x, degrees.
    pub sun_azimuth_deg: f64,
    pub sun_elevation_deg: f64,
    /// Second view: horizontal direction of the rectification shift and
    /// the tangent of its off-nadir angle.
    pub view2_azimuth_deg: f64,
    pub view2_tan_off_nadir: f64,
    /// Per-image radiometric gain/bias.
    pub gain_a: f64,
    pub bias_a: f64,
    pub gain_b: f64,
    pub bias_b: f64,
    /// Additive Gaussian sensor noise, intensity units.
    pub noise_sigma: f64,
    /// Amplitude of the smooth terrain albedo texture.
    pub terrain_texture_amp: f64,
    pub seed: u64,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        OrthoConfig {
            sun_azimuth_deg: 135.0,
            sun_elevation_deg: 50.0,
            view2_azimuth_deg: 0.0,
            view2_tan_off_nadir: 0.25,
            gain_a: 1.0,
            bias_a: 0.0,
            gain_b: 0.96,
            bias_b: 0.02,
            noise_sigma: 0.01,
            terrain_texture_amp: 0.08,
            seed: 0,
        }
    }
}

fn hash_cell(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    h = h.wrapping_add(ix as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_add(iy as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h as f64 / u64::MAX as f64) - 0.5
}

/// Lambertian hillshade of the true surface with per-building albedo and a
/// smooth terrain texture. The second channel is the same render warped
/// horizontally by `rect_error * tan(off-nadir)` along the second view's
/// azimuth, with independent gain/bias and noise.
pub fn render_ortho_pair(
    scene: &SceneModel,
    cfg: &OrthoConfig,
    spec: &GridSpec,
    rect_error: &RasterGrid,
) -> Result<OrthoPair> {
    if !cfg.view2_tan_off_nadir.is_finite() || cfg.view2_tan_off_nadir < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "bad off-nadir tangent {}",
            cfg.view2_tan_off_nadir
        )));
    }
    let (nr, nc) = (spec.n_rows, spec.n_cols);
    let h = spec.cell_size;
    let sun = {
        let az = cfg.sun_azimuth_deg.to_radians();
        let el = cfg.sun_elevation_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    };
    // South-up working arrays: row iy increases with world y.
    let mut base = Array2::<f64>::zeros((nr, nc));
    for iy in 0..nr {
        for ix in 0..nc {
            let x = spec.origin_xy.0 + (ix as f64 + 0.5) * h;
            let y = spec.origin_xy.1 + (iy as f64 + 0.5) * h;
            let dzdx = (scene.surface_height(x + h, y) - scene.surface_height(x - h, y)) / (2.0 * h);
            let dzdy = (scene.surface_height(x, y + h) - scene.surface_height(x, y - h)) / (2.0 * h);
            let norm = (dzdx * dzdx + dzdy * dzdy + 1.0).sqrt();
            let lambert = ((-dzdx * sun[0] - dzdy * sun[1] + sun[2]) / norm).max(0.0);
            let albedo = match scene.building_at(x, y) {
                Some(b) => b.albedo,
                None => {
                    let mut a = 0.45
                        + cfg.terrain_texture_amp
                            * ((0.11 * x).sin() + (0.07 * y + 1.3).sin()
                                + (0.23 * x + 0.19 * y).sin())
                            / 3.0;
                    if scene.in_forest(x, y) {
                        // High-frequency canopy-like texture.
                        a = 0.3 + cfg.terrain_texture_amp * hash_cell(cfg.seed, ix as i64, iy as i64);
                    } else if scene.in_water(x, y) {
                        a = 0.15;
                    }
                    a
                }
            };
            base[(iy, ix)] = (albedo * (0.25 + 0.75 * lambert)).clamp(0.0, 1.0);
        }
    }

    let sample_base = |x: f64, y: f64| -> f64 {
        let u = ((x - spec.origin_xy.0) / h - 0.5).clamp(0.0, (nc - 1) as f64);
        let v = ((y - spec.origin_xy.1) / h - 0.5).clamp(0.0, (nr - 1) as f64);
        let (ix0, iy0) = (u.floor() as usize, v.floor() as usize);
        let (ix1, iy1) = ((ix0 + 1).min(nc - 1), (iy0 + 1).min(nr - 1));
        let (fx, fy) = (u - ix0 as f64, v - iy0 as f64);
        base[(iy0, ix0)] * (1.0 - fx) * (1.0 - fy)
            + base[(iy0, ix1)] * fx * (1.0 - fy)
            + base[(iy1, ix0)] * (1.0 - fx) * fy
            + base[(iy1, ix1)] * fx * fy
    };
    let sample_error = |x: f64, y: f64| -> f64 {
        rect_error.value_at(x, y).unwrap_or(0.0)
    };

    let az2 = cfg.view2_azimuth_deg.to_radians();
    let (dir_x, dir_y) = (az2.cos(), az2.sin());
    let mut rng_a = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut rng_b = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-300)).unwrap();
    let mut img_a = spec.empty_grid()?;
    let mut img_b = spec.empty_grid()?;
    for iy in 0..nr {
        for ix in 0..nc {
            let x = spec.origin_xy.0 + (ix as f64 + 0.5) * h;
            let y = spec.origin_xy.1 + (iy as f64 + 0.5) * h;
            let na = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng_a) } else { 0.0 };
            let nb = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng_b) } else { 0.0 };
            let va = cfg.gain_a * base[(iy, ix)] + cfg.bias_a + na;
            let shift = sample_error(x, y) * cfg.view2_tan_off_nadir;
            let vb = cfg.gain_b * sample_base(x - shift * dir_x, y - shift * dir_y)
                + cfg.bias_b
                + nb;
            let r = nr - 1 - iy;
            img_a.set(r, ix, va.clamp(0.0, 1.0));
            img_b.set(r, ix, vb.clamp(0.0, 1.0));
        }
    }
    Ok(OrthoPair { a: img_a, b: img_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};

    fn flat_error_grid(spec: &GridSpec, v: f64) -> RasterGrid {
        let mut g = spec.empty_grid().unwrap();
        g.values_mut().fill(v);
        g
    }

    #[test]
    fn reference_dsm_flat_box() {
        use crate::scene::{Building, Roof, SceneModel, Terrain};
        let b = Building {
            center: (32.0, 32.0),
            half_len: 8.0,
            half_wid: 6.0,
            angle: 0.0,
            eave_z: 12.0,
            roof: Roof::Flat,
            albedo: 0.5,
        };
        let scene =
            SceneModel::assemble(0, (64.0, 64.0), Terrain::flat(0.0), vec![b], vec![], vec![])
                .unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, 1.0);
        let (dsm, masks) = render_reference_dsm(&scene, &spec).unwrap();
        for r in 0..spec.n_rows {
            for c in 0..spec.n_cols {
                let inside = masks.building.get(r, c) == 1.0;
                assert_eq!(dsm.get(r, c), if inside { 12.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gable_ridge_cell_value() {
        use crate::scene::{Building, Roof, SceneModel, Terrain};
        let b = Building {
            center: (32.0, 32.0),
            half_len: 10.0,
            half_wid: 6.0,
            angle: 0.0,
            eave_z: 8.0,
            roof: Roof::Gable { ridge_rise: 3.0, dormers: vec![] },
            albedo: 0.5,
        };
        let scene =
            SceneModel::assemble(0, (64.0, 64.0), Terrain::flat(0.0), vec![b], vec![], vec![])
                .unwrap();
        // Cell centered exactly on the ridge line (y = 32).
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, 1.0);
        let (dsm, _) = render_reference_dsm(&scene, &spec).unwrap();
        let (r, c) = dsm.world_to_cell(32.5, 32.0 - 0.5).unwrap();
        // Cell center at v = -0.5 from ridge: eave + rise*(1 - 0.5/6).
        let expect = 8.0 + 3.0 * (1.0 - 0.5 / 6.0);
        assert!((dsm.get(r, c) - expect).abs() < 1e-12);
    }

    #[test]
    fn masks_partition_cells() {
        let scene = generate_scene(3, &SceneConfig::default_for_extent((128.0, 128.0))).unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 128.0, 128.0, 1.0);
        let (_, masks) = render_reference_dsm(&scene, &spec).unwrap();
        for r in 0..spec.n_rows {
            for c in 0..spec.n_cols {
                assert_eq!(masks.building.get(r, c) + masks.terrain.get(r, c), 1.0);
                if masks.forest.get(r, c) == 1.0 || masks.water.get(r, c) == 1.0 {
                    assert_eq!(masks.terrain.get(r, c), 1.0);
                }
            }
        }
    }

    #[test]
    fn zero_error_identical_gains_gives_identical_channels() {
        let scene = generate_scene(5, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, 0.5);
        let cfg = OrthoConfig {
            gain_b: 1.0,
            bias_b: 0.0,
            noise_sigma: 0.0,
            ..OrthoConfig::default()
        };
        let err = flat_error_grid(&spec, 0.0);
        let pair = render_ortho_pair(&scene, &cfg, &spec, &err).unwrap();
        assert_eq!(pair.a.values(), pair.b.values());
    }

    #[test]
    fn flat_scene_sun_at_zenith_is_constant() {
        let cfg_scene = SceneConfig {
            building_density: 0.0,
            terrain_amplitude: 0.0,
            n_waves: 0,
            n_hills: 0,
            n_forest: 0,
            n_water: 0,
            ..SceneConfig::default_for_extent((64.0, 64.0))
        };
        let scene = generate_scene(1, &cfg_scene).unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, 0.5);
        let cfg = OrthoConfig {
            sun_elevation_deg: 90.0,
            noise_sigma: 0.0,
            terrain_texture_amp: 0.0,
            ..OrthoConfig::default()
        };
        let err = flat_error_grid(&spec, 0.0);
        let pair = render_ortho_pair(&scene, &cfg, &spec, &err).unwrap();
        let v0 = pair.a.get(0, 0);
        assert!(pair.a.values().iter().all(|&v| (v - v0).abs() < 1e-12));
    }

    #[test]
    fn known_height_error_shifts_second_channel() {
        // 2 m error under tan(off-nadir) = 0.25 must shift channel b by
        // 0.5 m = 2 px at 0.25 m cells, along +x.
        let cfg_scene = SceneConfig {
            building_density: 0.0,
            n_forest: 0,
            n_water: 0,
            ..SceneConfig::default_for_extent((64.0, 64.0))
        };
        let scene = generate_scene(9, &cfg_scene).unwrap();
        let spec = GridSpec::covering((0.0, 0.0), 64.0, 64.0, 0.25);
        let cfg = OrthoConfig {
            view2_azimuth_deg: 0.0,
            view2_tan_off_nadir: 0.25,
            gain_b: 1.0,
            bias_b: 0.0,
            noise_sigma: 0.0,
            terrain_texture_amp: 0.15,
            ..OrthoConfig::default()
        };
        let err = flat_error_grid(&spec, 2.0);
        let pair = render_ortho_pair(&scene, &cfg, &spec, &err).unwrap();
        // Zero-mean cross-correlation (equivalently SSD minimum) over
        // integer column shifts.
        let mut best = (0i64, f64::INFINITY);
        for shift in -4i64..=4 {
            let mut ssd = 0.0;
            for r in 8..spec.n_rows - 8 {
                for c in 8..spec.n_cols as i64 - 8 {
                    let d = pair.a.get(r, (c - shift) as usize) - pair.b.get(r, c as usize);
                    ssd += d * d;
                }
            }
            if ssd < best.1 {
                best = (shift, ssd);
            }
        }
        assert_eq!(best.0, 2, "expected a 2-pixel shift");
        assert!(best.1 < 1e-18, "aligned channels must match exactly");
    }
}
