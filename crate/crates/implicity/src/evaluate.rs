//! Masked DSM quality metrics: MAE / RMSE / MedAE per class, error maps,
//! and a plain-text report with fixed key order.

use crate::raster::RasterGrid;
use crate::{Error, Result};

/// Morphological dilation with a square structuring element of the given
/// radius. The input is treated as binary: > 0.5 is set.
pub fn dilate_mask(mask: &RasterGrid, pixels: usize) -> RasterGrid {
    let (nr, nc) = mask.dims();
    let mut out = mask.clone();
    let r = pixels as isize;
    for row in 0..nr as isize {
        for col in 0..nc as isize {
            let mut hit = false;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (row + dy, col + dx);
                    if y >= 0
                        && y < nr as isize
                        && x >= 0
                        && x < nc as isize
                        && mask.get(y as usize, x as usize) > 0.5
                    {
                        hit = true;
                        break 'scan;
                    }
                }
            }
            out.set(row as usize, col as usize, f64::from(hit));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub medae: f64,
    pub count: usize,
}

/// Per-class height error summary. A class with no valid pixels is absent,
/// not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub overall: Option<ClassMetrics>,
    pub buildings: Option<ClassMetrics>,
    pub terrain: Option<ClassMetrics>,
    pub terrain_no_forest: Option<ClassMetrics>,
    /// Cells dropped by the exclusion mask.
    pub excluded_cells: usize,
    /// Cells where either raster is nodata.
    pub invalid_cells: usize,
}

impl MetricsReport {
    /// Fixed key order so reports diff cleanly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let classes = [
            ("overall", &self.overall),
            ("buildings", &self.buildings),
            ("terrain", &self.terrain),
            ("terrain_no_forest", &self.terrain_no_forest),
        ];
        for (name, m) in classes {
            match m {
                Some(m) => {
                    s.push_str(&format!(
                        "class={name} count={} mae={:.9} rmse={:.9} medae={:.9}\n",
                        m.count, m.mae, m.rmse, m.medae
                    ));
                }
                None => s.push_str(&format!("class={name} absent\n")),
            }
        }
        s.push_str(&format!("excluded_cells={}\n", self.excluded_cells));
        s.push_str(&format!("invalid_cells={}\n", self.invalid_cells));
        s
    }
}

fn class_metrics(errors: &mut Vec<f64>) -> Option<ClassMetrics> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    errors.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    // Lower median for even counts: exact and reproducible.
    let medae = errors[(errors.len() - 1) / 2].abs();
    let m = ClassMetrics { mae, rmse, medae, count: errors.len() };
    assert!(m.mae <= m.rmse + 1e-12, "MAE {} > RMSE {}", m.mae, m.rmse);
    Some(m)
}

fn check_geometry(a: &RasterGrid, b: &RasterGrid, what: &str) -> Result<()> {
    if !a.same_geometry(b) {
        return Err(Error::InvalidGrid(format!(
            "{what} grid {} does not match prediction grid {}",
            b.geometry_summary(),
            a.geometry_summary()
        )));
    }
    Ok(())
}

/// Compare a predicted DSM against the reference. The building class uses
/// the mask dilated by 2 px; terrain is the complement of the undilated
/// mask; terrain_no_forest additionally drops forest cells. Exclusion mask
/// cells > 0.5 are dropped everywhere.
pub fn compute_metrics(
    pred: &RasterGrid,
    reference: &RasterGrid,
    building: Option<&RasterGrid>,
    forest: Option<&RasterGrid>,
    exclude: Option<&RasterGrid>,
) -> Result<MetricsReport> {
    check_geometry(pred, reference, "reference")?;
    if let Some(m) = building {
        check_geometry(pred, m, "building mask")?;
    }
    if let Some(m) = forest {
        check_geometry(pred, m, "forest mask")?;
    }
    if let Some(m) = exclude {
        check_geometry(pred, m, "exclusion mask")?;
    }
    let dilated = building.map(|m| dilate_mask(m, 2));
    let (nr, nc) = pred.dims();
    let mut overall = Vec::new();
    let mut buildings = Vec::new();
    let mut terrain = Vec::new();
    let mut terrain_nf = Vec::new();
    let mut excluded = 0usize;
    let mut invalid = 0usize;
    for r in 0..nr {
        for c in 0..nc {
            let (p, t) = (pred.get(r, c), reference.get(r, c));
            if pred.is_nodata(p) || reference.is_nodata(t) {
                invalid += 1;
                continue;
            }
            if exclude.is_some_and(|m| m.get(r, c) > 0.5) {
                excluded += 1;
                continue;
            }
            let e = p - t;
            overall.push(e);
            if let (Some(d), Some(b)) = (&dilated, building) {
                if d.get(r, c) > 0.5 {
                    buildings.push(e);
                }
                if b.get(r, c) <= 0.5 {
                    terrain.push(e);
                    if !forest.is_some_and(|f| f.get(r, c) > 0.5) {
                        terrain_nf.push(e);
                    }
                }
            }
        }
    }
    Ok(MetricsReport {
        overall: class_metrics(&mut overall),
        buildings: class_metrics(&mut buildings),
        terrain: class_metrics(&mut terrain),
        terrain_no_forest: class_metrics(&mut terrain_nf),
        excluded_cells: excluded,
        invalid_cells: invalid,
    })
}

/// Signed per-cell error map pred - ref; nodata where either side is.
pub fn signed_error_map(pred: &RasterGrid, reference: &RasterGrid) -> Result<RasterGrid> {
    check_geometry(pred, reference, "reference")?;
    let mut out = pred.clone();
    let (nr, nc) = pred.dims();
    for r in 0..nr {
        for c in 0..nc {
            let (p, t) = (pred.get(r, c), reference.get(r, c));
            let v = if pred.is_nodata(p) || reference.is_nodata(t) {
                out.nodata()
            } else {
                p - t
            };
            out.set(r, c, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(nr: usize, nc: usize, mut f: impl FnMut(usize, usize) -> f64) -> RasterGrid {
        let mut g = RasterGrid::new((0.0, 0.0), 1.0, nr, nc, 0.0, -9999.0).unwrap();
        for r in 0..nr {
            for c in 0..nc {
                g.set(r, c, f(r, c));
            }
        }
        g
    }

    #[test]
    fn dilation_of_a_single_pixel_is_a_5x5_block() {
        let m = grid(9, 9, |r, c| f64::from(r == 4 && c == 4));
        let d = dilate_mask(&m, 2);
        for r in 0..9 {
            for c in 0..9 {
                let expect = (2..=6).contains(&r) && (2..=6).contains(&c);
                assert_eq!(d.get(r, c) > 0.5, expect, "({r},{c})");
            }
        }
        let empty = grid(9, 9, |_, _| 0.0);
        assert_eq!(dilate_mask(&empty, 2).values(), empty.values());
    }

    #[test]
    fn dilation_matches_naive_neighborhood_or() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = grid(20, 17, |_, _| f64::from(rng.gen::<f64>() < 0.15));
        let d = dilate_mask(&m, 2);
        for r in 0..20i64 {
            for c in 0..17i64 {
                let mut any = false;
                for dy in -2..=2i64 {
                    for dx in -2..=2i64 {
                        let (y, x) = (r + dy, c + dx);
                        if (0..20).contains(&y) && (0..17).contains(&x) {
                            any |= m.get(y as usize, x as usize) > 0.5;
                        }
                    }
                }
                assert_eq!(d.get(r as usize, c as usize) > 0.5, any);
            }
        }
    }

    #[test]
    fn hand_computed_errors() {
        let reference = grid(1, 3, |_, _| 0.0);
        let pred = grid(1, 3, |_, c| [1.0, -2.0, 3.0][c]);
        let rep = compute_metrics(&pred, &reference, None, None, None).unwrap();
        let m = rep.overall.unwrap();
        assert!((m.mae - 2.0).abs() < 1e-12);
        assert!((m.rmse - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.medae - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_prediction_and_constant_offset() {
        let reference = grid(8, 8, |r, c| (r * c) as f64 * 0.1);
        let building = grid(8, 8, |r, _| f64::from(r < 4));
        let rep = compute_metrics(&reference, &reference, Some(&building), None, None).unwrap();
        for m in [rep.overall, rep.buildings, rep.terrain, rep.terrain_no_forest] {
            let m = m.unwrap();
            assert_eq!((m.mae, m.rmse, m.medae), (0.0, 0.0, 0.0));
        }
        let mut off = reference.clone();
        off.values_mut().mapv_inplace(|v| v + 1.0);
        let rep = compute_metrics(&off, &reference, Some(&building), None, None).unwrap();
        for m in [rep.overall, rep.buildings, rep.terrain, rep.terrain_no_forest] {
            let m = m.unwrap();
            assert!((m.mae - 1.0).abs() < 1e-12);
            assert!((m.rmse - 1.0).abs() < 1e-12);
            assert!((m.medae - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let reference = grid(13, 11, |_, _| rng.gen::<f64>() * 30.0);
            let pred = grid(13, 11, |r, c| reference.get(r, c) + rng.gen::<f64>() * 4.0 - 2.0);
            let rep = compute_metrics(&pred, &reference, None, None, None).unwrap();
            let m = rep.overall.unwrap();
            let mut abs: Vec<f64> = (0..13)
                .flat_map(|r| (0..11).map(move |c| (r, c)))
                .map(|(r, c)| (pred.get(r, c) - reference.get(r, c)).abs())
                .collect();
            abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = abs.len() as f64;
            let mae: f64 = abs.iter().sum::<f64>() / n;
            let rmse = (abs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
            let medae = abs[(abs.len() - 1) / 2];
            assert!((m.mae - mae).abs() < 1e-9);
            assert!((m.rmse - rmse).abs() < 1e-9);
            assert!((m.medae - medae).abs() < 1e-9);
            assert!(m.mae <= m.rmse + 1e-12);
        }
    }

    #[test]
    fn exclusions_shrink_monotonically_and_empty_class_is_absent() {
        let reference = grid(10, 10, |_, _| 1.0);
        let pred = grid(10, 10, |r, _| 1.0 + r as f64 * 0.01);
        let wide = grid(10, 10, |r, _| f64::from(r < 6));
        let narrow = grid(10, 10, |r, _| f64::from(r < 3));
        let rep_w = compute_metrics(&pred, &reference, None, None, Some(&wide)).unwrap();
        let rep_n = compute_metrics(&pred, &reference, None, None, Some(&narrow)).unwrap();
        assert!(rep_n.overall.unwrap().count >= rep_w.overall.unwrap().count);
        // All cells masked as building: terrain class has no pixels.
        let all = grid(10, 10, |_, _| 1.0);
        let rep = compute_metrics(&pred, &reference, Some(&all), None, None).unwrap();
        assert!(rep.terrain.is_none());
        assert!(rep.terrain_no_forest.is_none());
        assert!(rep.buildings.is_some());
        assert!(rep.to_text().contains("class=terrain absent"));
    }

    #[test]
    fn grid_mismatch_names_both_geometries() {
        let a = grid(4, 4, |_, _| 0.0);
        let b = RasterGrid::new((0.0, 0.0), 1.0, 5, 4, 0.0, -9999.0).unwrap();
        let err = compute_metrics(&a, &b, None, None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("4x4") && msg.contains("5x4"), "{msg}");
    }

    #[test]
    fn error_map_signs_and_nodata() {
        let reference = grid(3, 3, |_, _| 5.0);
        let mut pred = grid(3, 3, |r, _| 5.0 + r as f64 - 1.0);
        let nd = pred.nodata();
        pred.set(0, 0, nd);
        let em = signed_error_map(&pred, &reference).unwrap();
        assert!(em.is_nodata(em.get(0, 0)));
        assert_eq!(em.get(0, 1), -1.0);
        assert_eq!(em.get(1, 1), 0.0);
        assert_eq!(em.get(2, 1), 1.0);
    }
}
