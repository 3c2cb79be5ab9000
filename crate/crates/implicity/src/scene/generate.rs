//! Deterministic scene generation from (seed, config).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::building::{Building, Dormer, Roof};
use super::terrain::{Hill, SineWave, Terrain};
use super::{MaskRect, SceneModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Scene extent in meters; the scene spans [0, w] x [0, h].
    pub extent: (f64, f64),
    /// Buildings per hectare.
    pub building_density: f64,
    /// Full footprint length/width ranges, meters.
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    /// Eave height above local terrain.
    pub eave_range: (f64, f64),
    pub ridge_rise_range: (f64, f64),
    /// Probability of a flat (rather than gable) roof.
    pub flat_fraction: f64,
    /// Probability that a gable building carries dormers.
    pub dormer_probability: f64,
    /// Clearance between footprints, meters.
    pub clearance: f64,
    /// Force axis-aligned footprints.
    pub axis_aligned: bool,
    /// Snap footprint corners to this grid (0 disables). Only applied to
    /// axis-aligned footprints.
    pub snap_grid: f64,
    pub terrain_base: f64,
    pub terrain_amplitude: f64,
    pub n_waves: usize,
    pub n_hills: usize,
    pub n_forest: usize,
    pub n_water: usize,
    pub region_size_range: (f64, f64),
}

impl SceneConfig {
    pub fn default_for_extent(extent: (f64, f64)) -> SceneConfig {
        SceneConfig {
            extent,
            building_density: 6.1,
            length_range: (10.0, 24.0),
            width_range: (7.0, 14.0),
            eave_range: (4.0, 10.0),
            ridge_rise_range: (1.5, 4.0),
            flat_fraction: 0.3,
            dormer_probability: 0.6,
            clearance: 2.0,
            axis_aligned: false,
            snap_grid: 0.0,
            terrain_base: 400.0,
            terrain_amplitude: 6.0,
            n_waves: 3,
            n_hills: 2,
            n_forest: 2,
            n_water: 1,
            region_size_range: (24.0, 56.0),
        }
    }

    /// Flat terrain, flat roofs, grid-snapped axis-aligned footprints.
    /// Every surface is horizontal and every footprint edge lies on the
    /// snap grid, so median fusion of a noise-free cloud is exact.
    pub fn degenerate_flat(extent: (f64, f64), snap_grid: f64) -> SceneConfig {
        SceneConfig {
            flat_fraction: 1.0,
            dormer_probability: 0.0,
            axis_aligned: true,
            snap_grid,
            terrain_amplitude: 0.0,
            n_waves: 0,
            n_hills: 0,
            ..SceneConfig::default_for_extent(extent)
        }
    }

    fn target_buildings(&self) -> usize {
        (self.building_density * self.extent.0 * self.extent.1 / 10_000.0).round() as usize
    }
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain = generate_terrain(&mut rng, config);
    let buildings = place_buildings(&mut rng, config, &terrain)?;
    let forest = place_regions(&mut rng, config, config.n_forest);
    let water = place_regions(&mut rng, config, config.n_water);
    SceneModel::assemble(seed, config.extent, terrain, buildings, forest, water)
}

fn generate_terrain(rng: &mut ChaCha8Rng, config: &SceneConfig) -> Terrain {
    let mut waves = Vec::with_capacity(config.n_waves);
    let per_wave = if config.n_waves + config.n_hills > 0 {
        config.terrain_amplitude / (config.n_waves + config.n_hills) as f64
    } else {
        0.0
    };
    for _ in 0..config.n_waves {
        let wavelength = rng.gen_range(80.0..300.0);
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        waves.push(SineWave {
            amp: per_wave * rng.gen_range(0.5..1.0),
            fx: dir.cos() / wavelength,
            fy: dir.sin() / wavelength,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        });
    }
    let mut hills = Vec::with_capacity(config.n_hills);
    for _ in 0..config.n_hills {
        hills.push(Hill {
            amp: per_wave * rng.gen_range(1.0..2.0),
            cx: rng.gen_range(0.0..config.extent.0),
            cy: rng.gen_range(0.0..config.extent.1),
            radius: rng.gen_range(40.0..120.0),
        });
    }
    Terrain { base: config.terrain_base, waves, hills }
}

fn snap(v: f64, grid: f64) -> f64 {
    if grid > 0.0 {
        (v / grid).round() * grid
    } else {
        v
    }
}

fn place_buildings(
    rng: &mut ChaCha8Rng,
    config: &SceneConfig,
    terrain: &Terrain,
) -> Result<Vec<Building>> {
    let target = config.target_buildings();
    let mut placed: Vec<Building> = Vec::with_capacity(target);
    const TRIES_PER_BUILDING: usize = 60;
    for _ in 0..target {
        let mut ok = false;
        for _ in 0..TRIES_PER_BUILDING {
            let b = propose_building(rng, config, terrain);
            let margin = 2.0;
            let (x0, y0, x1, y1) = b.bounding_box();
            if x0 < margin
                || y0 < margin
                || x1 > config.extent.0 - margin
                || y1 > config.extent.1 - margin
            {
                continue;
            }
            if placed.iter().any(|p| p.overlaps(&b, config.clearance)) {
                continue;
            }
            placed.push(b);
            ok = true;
            break;
        }
        let _ = ok;
    }
    if target > 0 && placed.len() * 2 < target {
        return Err(Error::SceneGeneration(format!(
            "could not place buildings without overlap: {} of {target}",
            placed.len()
        )));
    }
    Ok(placed)
}

fn propose_building(rng: &mut ChaCha8Rng, config: &SceneConfig, terrain: &Terrain) -> Building {
    let len = rng.gen_range(config.length_range.0..=config.length_range.1);
    let wid = rng.gen_range(config.width_range.0..=config.width_range.1);
    let mut half_len = len / 2.0;
    let mut half_wid = wid / 2.0;
    let angle = if config.axis_aligned {
        0.0
    } else {
        rng.gen_range(0.0..std::f64::consts::PI)
    };
    let mut cx = rng.gen_range(0.0..config.extent.0);
    let mut cy = rng.gen_range(0.0..config.extent.1);
    if config.axis_aligned && config.snap_grid > 0.0 {
        // Snap edges, not the center, so footprint borders lie exactly on
        // grid lines.
        let g = config.snap_grid;
        let x0 = snap(cx - half_len, g);
        let x1 = snap(cx + half_len, g).max(x0 + g);
        let y0 = snap(cy - half_wid, g);
        let y1 = snap(cy + half_wid, g).max(y0 + g);
        cx = 0.5 * (x0 + x1);
        cy = 0.5 * (y0 + y1);
        half_len = 0.5 * (x1 - x0);
        half_wid = 0.5 * (y1 - y0);
    }
    let eave_height = rng.gen_range(config.eave_range.0..=config.eave_range.1);
    // Keep randomness consumption fixed regardless of roof outcome.
    let flat_draw = rng.gen::<f64>();
    let ridge_rise = rng.gen_range(config.ridge_rise_range.0..=config.ridge_rise_range.1);
    let dormer_draw = rng.gen::<f64>();
    let n_dormers = rng.gen_range(1..=2usize);

    // Eave must clear the terrain across the footprint; terrain is smooth,
    // sample a coarse grid over the bounding box.
    let mut t_max = f64::NEG_INFINITY;
    for iu in 0..=4 {
        for iv in 0..=4 {
            let u = -half_len + half_len * 0.5 * iu as f64;
            let v = -half_wid + half_wid * 0.5 * iv as f64;
            let (s, c) = angle.sin_cos();
            let x = cx + u * c - v * s;
            let y = cy + u * s + v * c;
            t_max = t_max.max(terrain.height(x, y));
        }
    }
    let eave_z = t_max + eave_height;

    let roof = if flat_draw < config.flat_fraction {
        Roof::Flat
    } else {
        let mut dormers = Vec::new();
        if dormer_draw < config.dormer_probability {
            for k in 0..n_dormers {
                let half_u = (half_len * 0.18).clamp(0.5, 2.0);
                let half_v = (half_wid * 0.22).clamp(0.4, 1.5);
                let u_lo = -half_len + half_u + 0.5;
                let u_hi = half_len - half_u - 0.5;
                if u_lo >= u_hi {
                    break;
                }
                let u_center = rng.gen_range(u_lo..u_hi);
                let v_lo = half_v + 0.1 * half_wid;
                let v_hi = half_wid - half_v - 0.1 * half_wid;
                if v_lo >= v_hi {
                    break;
                }
                let v_center = rng.gen_range(v_lo..v_hi);
                let face: i8 = if k % 2 == 0 { 1 } else { -1 };
                // Top sits above the highest roof point under the dormer.
                let near_ridge_v = v_center - half_v;
                let roof_at_near = eave_z + ridge_rise * (1.0 - near_ridge_v / half_wid);
                let top_z = roof_at_near + rng.gen_range(0.4..1.0);
                dormers.push(Dormer { face, u_center, v_center, half_u, half_v, top_z });
            }
        }
        Roof::Gable { ridge_rise, dormers }
    };
    Building {
        center: (cx, cy),
        half_len,
        half_wid,
        angle,
        eave_z,
        roof,
        albedo: rng.gen_range(0.25..0.85),
    }
}

fn place_regions(rng: &mut ChaCha8Rng, config: &SceneConfig, n: usize) -> Vec<MaskRect> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w = rng
            .gen_range(config.region_size_range.0..=config.region_size_range.1)
            .min(config.extent.0 * 0.45);
        let h = rng
            .gen_range(config.region_size_range.0..=config.region_size_range.1)
            .min(config.extent.1 * 0.45);
        let x0 = rng.gen_range(0.0..(config.extent.0 - w).max(1e-9));
        let y0 = rng.gen_range(0.0..(config.extent.1 - h).max(1e-9));
        out.push(MaskRect { x_min: x0, y_min: y0, x_max: x0 + w, y_max: y0 + h });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed_and_config() {
        let cfg = SceneConfig::default_for_extent((128.0, 128.0));
        let a = generate_scene(7, &cfg).unwrap();
        let b = generate_scene(7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(8, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_density_gives_terrain_only_scene() {
        let cfg = SceneConfig {
            building_density: 0.0,
            ..SceneConfig::default_for_extent((128.0, 128.0))
        };
        let s = generate_scene(1, &cfg).unwrap();
        assert!(s.buildings.is_empty());
    }

    #[test]
    fn target_forty_buildings_placed_without_overlap() {
        let cfg = SceneConfig::default_for_extent((256.0, 256.0));
        assert_eq!(cfg.target_buildings(), 40);
        let s = generate_scene(42, &cfg).unwrap();
        assert!(
            (30..=50).contains(&s.buildings.len()),
            "placed {}",
            s.buildings.len()
        );
        // Brute-force pairwise footprint intersection check.
        for i in 0..s.buildings.len() {
            for j in (i + 1)..s.buildings.len() {
                assert!(
                    !s.buildings[i].overlaps(&s.buildings[j], 0.0),
                    "buildings {i} and {j} overlap"
                );
            }
        }
    }

    #[test]
    fn unsatisfiable_density_errors() {
        let cfg = SceneConfig {
            building_density: 400.0,
            ..SceneConfig::default_for_extent((64.0, 64.0))
        };
        assert!(matches!(generate_scene(3, &cfg), Err(Error::SceneGeneration(_))));
    }

    #[test]
    fn eave_clears_terrain_and_dormers_sit_on_roof() {
        let s = generate_scene(21, &SceneConfig::default_for_extent((256.0, 256.0))).unwrap();
        let mut saw_dormer = false;
        for b in &s.buildings {
            for (x, y) in b.corners() {
                assert!(b.eave_z > s.terrain.height(x, y));
            }
            if let Roof::Gable { ridge_rise, dormers } = &b.roof {
                for d in dormers {
                    saw_dormer = true;
                    assert!(d.v_center - d.half_v >= 0.0);
                    assert!(d.v_center + d.half_v <= b.half_wid);
                    assert!(d.u_center.abs() + d.half_u <= b.half_len);
                    // Top must protrude above the roof plane across the
                    // whole dormer footprint.
                    let highest_under = b.eave_z
                        + ridge_rise * (1.0 - (d.v_center - d.half_v) / b.half_wid);
                    assert!(d.top_z > highest_under);
                }
            }
        }
        assert!(saw_dormer, "expected at least one dormer in this scene");
    }
}
