//! Training query points: uniform volume samples plus Gaussian-perturbed
//! surface samples at a fixed 1:4 ratio.

use std::io::{BufWriter, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::patch::PatchWindow;
use crate::scene::SceneModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryTag {
    Uniform,
    Surface,
}

impl QueryTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            QueryTag::Uniform => "uniform",
            QueryTag::Surface => "surface",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Query {
    pub x: [f64; 3],
    pub o: u8,
    pub weight: f64,
    pub tag: QueryTag,
}

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub queries: Vec<Query>,
}

impl QuerySet {
    pub fn count_tag(&self, tag: QueryTag) -> usize {
        self.queries.iter().filter(|q| q.tag == tag).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "x,y,z,o,w,tag")?;
        for q in &self.queries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                q.x[0],
                q.x[1],
                q.x[2],
                q.o,
                q.weight,
                q.tag.as_str()
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A facade wall usable for surface draws: the plan segment clipped to the
/// sampling window, with an area proxy for its selection weight.
struct Wall {
    p0: (f64, f64),
    p1: (f64, f64),
    center: (f64, f64),
    weight: f64,
}

fn clip_segment(
    p0: (f64, f64),
    p1: (f64, f64),
    rect: (f64, f64, f64, f64),
) -> Option<((f64, f64), (f64, f64))> {
    // Liang-Barsky.
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [
        (-dx, p0.0 - rect.0),
        (dx, rect.2 - p0.0),
        (-dy, p0.1 - rect.1),
        (dy, rect.3 - p0.1),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
            continue;
        }
        let r = q / p;
        if p < 0.0 {
            t0 = t0.max(r);
        } else {
            t1 = t1.min(r);
        }
        if t0 > t1 {
            return None;
        }
    }
    Some((
        (p0.0 + t0 * dx, p0.1 + t0 * dy),
        (p0.0 + t1 * dx, p0.1 + t1 * dy),
    ))
}

fn collect_walls(scene: &SceneModel, rect: (f64, f64, f64, f64)) -> Vec<Wall> {
    let mut walls = Vec::new();
    for b in &scene.buildings {
        let (bx0, by0, bx1, by1) = b.bounding_box();
        if bx1 < rect.0 || bx0 > rect.2 || by1 < rect.1 || by0 > rect.3 {
            continue;
        }
        let corners = b.corners();
        for i in 0..4 {
            let (p0, p1) = (corners[i], corners[(i + 1) % 4]);
            let Some((c0, c1)) = clip_segment(p0, p1, rect) else {
                continue;
            };
            let len = ((c1.0 - c0.0).powi(2) + (c1.1 - c0.1).powi(2)).sqrt();
            let mid = ((c0.0 + c1.0) / 2.0, (c0.1 + c1.1) / 2.0);
            let height = (b.eave_z - scene.terrain.height(mid.0, mid.1)).max(0.0);
            if len * height <= 0.0 {
                continue;
            }
            walls.push(Wall { p0: c0, p1: c1, center: b.center, weight: len * height });
        }
    }
    walls
}

/// Draw `total` labeled training queries in the window: floor(total/5)
/// uniform volume points, the rest surface points perturbed by an isotropic
/// Gaussian of the given sigma. Points over water or forest get weight 0.5.
pub fn sample_training_queries(
    scene: &SceneModel,
    window: &PatchWindow,
    total: usize,
    sigma: f64,
    seed: u64,
) -> Result<QuerySet> {
    if total < 5 {
        return Err(Error::InvalidConfig(format!("need at least 5 queries, got {total}")));
    }
    let rect = (
        window.origin_xy.0,
        window.origin_xy.1,
        window.origin_xy.0 + window.side,
        window.origin_xy.1 + window.side,
    );
    let tol = 1e-9 * (1.0 + scene.extent.0.max(scene.extent.1));
    if rect.0 < -tol || rect.1 < -tol || rect.2 > scene.extent.0 + tol || rect.3 > scene.extent.1 + tol
    {
        return Err(Error::OutOfBounds(format!(
            "window {rect:?} outside scene extent {:?}",
            scene.extent
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_uniform = total / 5;
    let n_surface = total - n_uniform;
    let mut queries = Vec::with_capacity(total);

    // Uniform volume draws span the surface bounds with a 5 m margin.
    let (z_lo, z_hi) = (scene.z_min + 5.0, scene.z_max - 5.0);
    let label = |scene: &SceneModel, p: [f64; 3]| -> Result<(u8, f64)> {
        let o = scene.occupancy_oracle(p)?;
        let w = if scene.in_water(p[0], p[1]) || scene.in_forest(p[0], p[1]) { 0.5 } else { 1.0 };
        Ok((o, w))
    };
    for _ in 0..n_uniform {
        let x = rect.0 + rng.gen::<f64>() * window.side;
        let y = rect.1 + rng.gen::<f64>() * window.side;
        let z = z_lo + rng.gen::<f64>() * (z_hi - z_lo);
        let (o, weight) = label(scene, [x, y, z])?;
        queries.push(Query { x: [x, y, z], o, weight, tag: QueryTag::Uniform });
    }

    // Surface draws: the top surface (plan-area proportional, roofs counted
    // twice) competes with facade walls by an area proxy.
    let walls = collect_walls(scene, rect);
    let roof_frac = {
        let probes = 12;
        let mut hits = 0usize;
        for iy in 0..probes {
            for ix in 0..probes {
                let x = rect.0 + (ix as f64 + 0.5) / probes as f64 * window.side;
                let y = rect.1 + (iy as f64 + 0.5) / probes as f64 * window.side;
                hits += usize::from(scene.building_at(x, y).is_some());
            }
        }
        hits as f64 / (probes * probes) as f64
    };
    let top_weight = window.side * window.side * (1.0 + roof_frac);
    let facade_weight: f64 = walls.iter().map(|w| w.weight).sum();
    let total_weight = top_weight + facade_weight;
    let gauss = if sigma > 0.0 { Some(Normal::new(0.0, sigma).unwrap()) } else { None };
    let eps = 1e-9 * (1.0 + scene.extent.0.max(scene.extent.1));

    for _ in 0..n_surface {
        let pick = rng.gen::<f64>() * total_weight;
        let mut p = if pick < top_weight || walls.is_empty() {
            // Rejection keeps roof columns at twice the plan density.
            loop {
                let x = rect.0 + rng.gen::<f64>() * window.side;
                let y = rect.1 + rng.gen::<f64>() * window.side;
                let on_roof = scene.building_at(x, y).is_some();
                if on_roof || rng.gen::<f64>() < 0.5 {
                    break [x, y, scene.surface_height(x, y)];
                }
            }
        } else {
            let mut acc = pick - top_weight;
            let mut chosen = &walls[walls.len() - 1];
            for w in &walls {
                if acc < w.weight {
                    chosen = w;
                    break;
                }
                acc -= w.weight;
            }
            let t = rng.gen::<f64>();
            let mut x = chosen.p0.0 + t * (chosen.p1.0 - chosen.p0.0);
            let mut y = chosen.p0.1 + t * (chosen.p1.1 - chosen.p0.1);
            // Pull a hair toward the footprint center so the column test
            // sees the building side of the wall.
            let (dx, dy) = (chosen.center.0 - x, chosen.center.1 - y);
            let norm = (dx * dx + dy * dy).sqrt().max(1e-12);
            x += eps * dx / norm;
            y += eps * dy / norm;
            let bottom = scene.terrain.height(x, y);
            let top = scene.surface_height(x, y);
            let z = bottom + rng.gen::<f64>() * (top - bottom).max(0.0);
            [x, y, z]
        };
        if let Some(g) = gauss {
            for v in &mut p {
                *v += g.sample(&mut rng);
            }
        }
        p[0] = p[0].clamp(0.0, scene.extent.0);
        p[1] = p[1].clamp(0.0, scene.extent.1);
        p[2] = p[2].clamp(scene.z_min, scene.z_max);
        let (o, weight) = label(scene, p)?;
        queries.push(Query { x: p, o, weight, tag: QueryTag::Surface });
    }
    Ok(QuerySet { queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, Building, MaskRect, Roof, SceneConfig, SceneModel, Terrain};

    fn window(origin: (f64, f64), side: f64) -> PatchWindow {
        PatchWindow::new(origin, side, 0.0, 1.0).unwrap()
    }

    #[test]
    fn ratio_is_one_to_four_under_floor_rule() {
        let scene = generate_scene(2, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let w = window((0.0, 0.0), 64.0);
        for total in [5usize, 7, 1000, 1234] {
            let qs = sample_training_queries(&scene, &w, total, 0.4, 1).unwrap();
            assert_eq!(qs.count_tag(QueryTag::Uniform), total / 5);
            assert_eq!(qs.count_tag(QueryTag::Surface), total - total / 5);
            assert_eq!(qs.queries.len(), total);
        }
    }

    #[test]
    fn zero_sigma_surface_samples_are_occupied() {
        let scene = generate_scene(5, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let w = window((0.0, 0.0), 64.0);
        let qs = sample_training_queries(&scene, &w, 5000, 0.0, 3).unwrap();
        for q in &qs.queries {
            if q.tag == QueryTag::Surface {
                assert_eq!(q.o, 1, "surface query {:?}", q.x);
            }
        }
    }

    #[test]
    fn flat_roof_straddles_half_occupied() {
        let b = Building {
            center: (32.0, 32.0),
            half_len: 24.0,
            half_wid: 24.0,
            angle: 0.0,
            eave_z: 10.0,
            roof: Roof::Flat,
            albedo: 0.5,
        };
        let scene =
            SceneModel::assemble(0, (64.0, 64.0), Terrain::flat(0.0), vec![b], vec![], vec![])
                .unwrap();
        // Window well inside the footprint, away from walls.
        let w = window((20.0, 20.0), 24.0);
        let total = 125_000;
        let qs = sample_training_queries(&scene, &w, total, 0.4, 7).unwrap();
        let surf: Vec<&Query> =
            qs.queries.iter().filter(|q| q.tag == QueryTag::Surface).collect();
        assert_eq!(surf.len(), 100_000);
        let occ = surf.iter().filter(|q| q.o == 1).count() as f64 / surf.len() as f64;
        assert!((occ - 0.5).abs() < 0.02, "occupied fraction {occ}");
    }

    #[test]
    fn labels_match_independent_surface_test() {
        let scene = generate_scene(8, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let w = window((8.0, 8.0), 48.0);
        let qs = sample_training_queries(&scene, &w, 10_000, 0.4, 9).unwrap();
        for q in &qs.queries {
            let expect = u8::from(q.x[2] <= scene.surface_height(q.x[0], q.x[1]));
            assert_eq!(q.o, expect, "query {:?}", q.x);
        }
    }

    #[test]
    fn masked_regions_get_half_weight() {
        // The mask overshoots the extent so boundary-clamped samples stay inside.
        let forest = MaskRect { x_min: -1.0, y_min: -1.0, x_max: 32.0, y_max: 65.0 };
        let scene =
            SceneModel::assemble(0, (64.0, 64.0), Terrain::flat(1.0), vec![], vec![forest], vec![])
                .unwrap();
        let w = window((0.0, 0.0), 64.0);
        let qs = sample_training_queries(&scene, &w, 4000, 0.4, 11).unwrap();
        let mut saw_half = false;
        let mut saw_full = false;
        for q in &qs.queries {
            if q.x[0] < 32.0 {
                assert_eq!(q.weight, 0.5);
                saw_half = true;
            } else {
                assert_eq!(q.weight, 1.0);
                saw_full = true;
            }
        }
        assert!(saw_half && saw_full);
    }

    #[test]
    fn deterministic_and_rejects_bad_input() {
        let scene = generate_scene(1, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let w = window((0.0, 0.0), 64.0);
        let a = sample_training_queries(&scene, &w, 500, 0.4, 13).unwrap();
        let b = sample_training_queries(&scene, &w, 500, 0.4, 13).unwrap();
        for (p, q) in a.queries.iter().zip(b.queries.iter()) {
            assert_eq!(p.x, q.x);
            assert_eq!(p.o, q.o);
        }
        assert!(sample_training_queries(&scene, &w, 4, 0.4, 0).is_err());
        let outside = window((32.0, 32.0), 64.0);
        assert!(sample_training_queries(&scene, &outside, 100, 0.4, 0).is_err());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let scene = generate_scene(1, &SceneConfig::default_for_extent((64.0, 64.0))).unwrap();
        let w = window((0.0, 0.0), 64.0);
        let qs = sample_training_queries(&scene, &w, 10, 0.4, 0).unwrap();
        let mut buf = Vec::new();
        qs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,y,z,o,w,tag");
        assert_eq!(lines.count(), 10);
        assert!(text.contains("uniform") && text.contains("surface"));
    }
}
