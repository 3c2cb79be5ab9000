//! Ground-truth surface and volume sampling of a scene.
//!
//! All sample families are jittered cell-centered grids, so the mean
//! nearest-neighbor spacing tracks the requested spacing closely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

use super::{Building, SceneModel};

#[derive(Debug, Clone, Copy)]
pub struct SurfaceSampleSpec {
    /// Sample spacing on roofs (finer, to capture dormers).
    pub spacing_roof: f64,
    /// Sample spacing on facades and terrain.
    pub spacing_other: f64,
    /// Spacing of the volumetric samples.
    pub spacing_uniform: f64,
    pub seed: u64,
}

impl Default for SurfaceSampleSpec {
    fn default() -> Self {
        SurfaceSampleSpec {
            spacing_roof: 0.1,
            spacing_other: 0.2,
            spacing_uniform: 1.0,
            seed: 0,
        }
    }
}

/// Labeled ground-truth point sets. Surface points carry occupancy 1 by
/// construction; volume points are labeled by the oracle.
#[derive(Debug, Clone)]
pub struct LabeledPoints {
    pub roof: Vec<[f64; 3]>,
    pub facade: Vec<[f64; 3]>,
    pub terrain: Vec<[f64; 3]>,
    pub uniform: Vec<([f64; 3], u8)>,
}

impl LabeledPoints {
    pub fn surface_iter(&self) -> impl Iterator<Item = &[f64; 3]> {
        self.roof.iter().chain(self.facade.iter()).chain(self.terrain.iter())
    }
}

fn jitter(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    (rng.gen::<f64>() - 0.5) * 2.0 * amp
}

pub fn sample_gt_surface(scene: &SceneModel, spec: &SurfaceSampleSpec) -> Result<LabeledPoints> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = LabeledPoints {
        roof: Vec::new(),
        facade: Vec::new(),
        terrain: Vec::new(),
        uniform: Vec::new(),
    };

    // Terrain: plan grid at spacing_other, skipping building footprints.
    let s = spec.spacing_other;
    let j = 0.1 * s;
    let nx = (scene.extent.0 / s).round() as usize;
    let ny = (scene.extent.1 / s).round() as usize;
    for iy in 0..ny {
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) * s + jitter(&mut rng, j);
            let y = (iy as f64 + 0.5) * s + jitter(&mut rng, j);
            if !scene.contains_xy(x, y) || scene.building_at(x, y).is_some() {
                continue;
            }
            out.terrain.push([x, y, scene.terrain.height(x, y)]);
        }
    }

    for b in &scene.buildings {
        sample_roof(scene, b, spec, &mut rng, &mut out.roof);
        sample_facades(scene, b, spec, &mut rng, &mut out.facade);
    }

    // Volume: jittered 3D grid labeled by the oracle.
    let su = spec.spacing_uniform;
    let ju = 0.1 * su;
    let nz = ((scene.z_max - scene.z_min) / su).round() as usize;
    let nx = (scene.extent.0 / su).round() as usize;
    let ny = (scene.extent.1 / su).round() as usize;
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let x = ((ix as f64 + 0.5) * su + jitter(&mut rng, ju))
                    .clamp(0.0, scene.extent.0);
                let y = ((iy as f64 + 0.5) * su + jitter(&mut rng, ju))
                    .clamp(0.0, scene.extent.1);
                let z = (scene.z_min + (iz as f64 + 0.5) * su + jitter(&mut rng, ju))
                    .clamp(scene.z_min, scene.z_max);
                let o = scene.occupancy_oracle([x, y, z])?;
                out.uniform.push(([x, y, z], o));
            }
        }
    }
    Ok(out)
}

fn sample_roof(
    scene: &SceneModel,
    b: &Building,
    spec: &SurfaceSampleSpec,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<[f64; 3]>,
) {
    let s = spec.spacing_roof;
    let j = 0.1 * s;
    let nu = (2.0 * b.half_len / s).round().max(1.0) as usize;
    let nv = (2.0 * b.half_wid / s).round().max(1.0) as usize;
    for iv in 0..nv {
        for iu in 0..nu {
            let u = -b.half_len + (iu as f64 + 0.5) * s + jitter(rng, j);
            let v = -b.half_wid + (iv as f64 + 0.5) * s + jitter(rng, j);
            if u.abs() > b.half_len || v.abs() > b.half_wid {
                continue;
            }
            let (x, y) = b.local_to_world(u, v);
            if !scene.contains_xy(x, y) {
                continue;
            }
            // Height through the same world-coordinate path as the oracle,
            // so rotation round-off cannot lift the sample above the
            // surface.
            out.push([x, y, scene.surface_height(x, y)]);
        }
    }
}

fn sample_facades(
    scene: &SceneModel,
    b: &Building,
    spec: &SurfaceSampleSpec,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<[f64; 3]>,
) {
    let s = spec.spacing_other;
    let j = 0.1 * s;
    // Pull wall samples a hair inside the footprint so rotation round-off
    // cannot push them outside the containment test.
    let eps = 1e-9 * (1.0 + b.half_len.max(b.half_wid));
    // Eave-side walls: v = +-half_wid, wall top at the eave.
    for side in [-1.0, 1.0] {
        let nu = (2.0 * b.half_len / s).round().max(1.0) as usize;
        for iu in 0..nu {
            let u = -b.half_len + (iu as f64 + 0.5) * s + jitter(rng, j);
            let v = side * (b.half_wid - eps);
            let (x, y) = b.local_to_world(u.clamp(-b.half_len + eps, b.half_len - eps), v);
            if !scene.contains_xy(x, y) {
                continue;
            }
            let z_bottom = scene.terrain.height(x, y);
            let top = scene.surface_height(x, y);
            wall_column(x, y, z_bottom, top, s, j, rng, out);
        }
    }
    // Gable-end walls: u = +-half_len, wall top follows the roof profile.
    for side in [-1.0, 1.0] {
        let nv = (2.0 * b.half_wid / s).round().max(1.0) as usize;
        for iv in 0..nv {
            let v = -b.half_wid + (iv as f64 + 0.5) * s + jitter(rng, j);
            let u = side * (b.half_len - eps);
            let (x, y) = b.local_to_world(u, v.clamp(-b.half_wid + eps, b.half_wid - eps));
            if !scene.contains_xy(x, y) {
                continue;
            }
            let z_bottom = scene.terrain.height(x, y);
            let top = scene.surface_height(x, y);
            wall_column(x, y, z_bottom, top, s, j, rng, out);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn wall_column(
    x: f64,
    y: f64,
    z_bottom: f64,
    z_top: f64,
    s: f64,
    j: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<[f64; 3]>,
) {
    if z_top <= z_bottom {
        return;
    }
    let nz = ((z_top - z_bottom) / s).round().max(1.0) as usize;
    for iz in 0..nz {
        let z = (z_bottom + (iz as f64 + 0.5) * s + jitter(rng, j)).clamp(z_bottom, z_top);
        out.push([x, y, z]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig, SceneModel, Terrain};

    fn mean_nn_2d(points: &[[f64; 3]], sample: usize) -> f64 {
        // Brute force on a subsample; fine for test sizes.
        let step = (points.len() / sample.min(points.len())).max(1);
        let mut total = 0.0;
        let mut count = 0usize;
        for p in points.iter().step_by(step) {
            let mut best = f64::INFINITY;
            for q in points {
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d2 > 0.0 && d2 < best {
                    best = d2;
                }
            }
            total += best.sqrt();
            count += 1;
        }
        total / count as f64
    }

    fn flat_roof_scene() -> SceneModel {
        use crate::scene::{Building, Roof};
        let b = Building {
            center: (16.0, 16.0),
            half_len: 5.0,
            half_wid: 5.0,
            angle: 0.0,
            eave_z: 12.0,
            roof: Roof::Flat,
            albedo: 0.5,
        };
        SceneModel::assemble(0, (32.0, 32.0), Terrain::flat(0.0), vec![b], vec![], vec![]).unwrap()
    }

    #[test]
    fn flat_roof_count_matches_area_over_spacing_squared() {
        let scene = flat_roof_scene();
        let spec = SurfaceSampleSpec { spacing_uniform: 4.0, ..Default::default() };
        let pts = sample_gt_surface(&scene, &spec).unwrap();
        let expect = (10.0f64 / 0.1).powi(2);
        let got = pts.roof.len() as f64;
        assert!(
            (got - expect).abs() / expect < 0.05,
            "roof count {got} vs {expect}"
        );
    }

    #[test]
    fn surface_samples_are_occupied_and_uniform_above_is_free() {
        let scene = generate_scene(4, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let spec = SurfaceSampleSpec {
            spacing_roof: 0.25,
            spacing_other: 0.5,
            spacing_uniform: 2.5,
            seed: 1,
        };
        let pts = sample_gt_surface(&scene, &spec).unwrap();
        for p in pts.surface_iter() {
            assert_eq!(scene.occupancy_oracle(*p).unwrap(), 1, "surface point {p:?}");
        }
        for (p, o) in &pts.uniform {
            let surf = scene.surface_height(p[0], p[1]);
            if p[2] > surf {
                assert_eq!(*o, 0);
            } else {
                assert_eq!(*o, 1);
            }
        }
    }

    #[test]
    fn nearest_neighbor_spacing_tracks_targets() {
        let scene = flat_roof_scene();
        let spec = SurfaceSampleSpec {
            spacing_roof: 0.2,
            spacing_other: 0.4,
            spacing_uniform: 4.0,
            seed: 2,
        };
        let pts = sample_gt_surface(&scene, &spec).unwrap();
        let nn_roof = mean_nn_2d(&pts.roof, 200);
        assert!(
            (nn_roof - 0.2).abs() / 0.2 < 0.2,
            "roof nn spacing {nn_roof}"
        );
        let nn_terr = mean_nn_2d(&pts.terrain, 200);
        assert!(
            (nn_terr - 0.4).abs() / 0.4 < 0.2,
            "terrain nn spacing {nn_terr}"
        );
    }
}
