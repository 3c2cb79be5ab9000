//! Parametric ground-truth city scenes with an exact occupancy oracle.
//!
//! A scene is a smooth terrain heightfield plus non-overlapping building
//! prisms (flat or gable roofs, optional box dormers) and forest/water
//! region masks. Geometry is 2.5D: a column at (x, y) is occupied for all
//! z at or below the surface height and free above it.

mod building;
mod generate;
mod io;
mod render;
mod sample;
mod terrain;

pub use building::{Building, Dormer, Roof};
pub use generate::{generate_scene, SceneConfig};
pub use render::{render_ortho_pair, render_reference_dsm, GridSpec, OrthoConfig, OrthoPair, SceneMasks};
pub use sample::{sample_gt_surface, LabeledPoints, SurfaceSampleSpec};
pub use terrain::Terrain;

use crate::{Error, Result};

/// Axis-aligned rectangular region used for forest and water masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl MaskRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

/// Analytic city model: the source of true occupancy and reference DSMs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub seed: u64,
    /// Scene extent in meters; the scene spans [0, w] x [0, h].
    pub extent: (f64, f64),
    pub terrain: Terrain,
    pub buildings: Vec<Building>,
    pub forest: Vec<MaskRect>,
    pub water: Vec<MaskRect>,
    /// Vertical volume of interest.
    pub z_min: f64,
    pub z_max: f64,
    /// Coarse lookup grid: building indices per bucket.
    index: SpatialIndex,
}

impl SceneModel {
    pub fn assemble(
        seed: u64,
        extent: (f64, f64),
        terrain: Terrain,
        buildings: Vec<Building>,
        forest: Vec<MaskRect>,
        water: Vec<MaskRect>,
    ) -> Result<SceneModel> {
        if !(extent.0 > 0.0 && extent.1 > 0.0) {
            return Err(Error::SceneGeneration(format!("bad extent {extent:?}")));
        }
        let index = SpatialIndex::build(extent, &buildings);
        let mut scene = SceneModel {
            seed,
            extent,
            terrain,
            buildings,
            forest,
            water,
            z_min: 0.0,
            z_max: 0.0,
            index,
        };
        let (lo, hi) = scene.surface_bounds();
        scene.z_min = lo - 10.0;
        scene.z_max = hi + 10.0;
        Ok(scene)
    }

    fn surface_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let steps = 64;
        for iy in 0..=steps {
            for ix in 0..=steps {
                let x = self.extent.0 * ix as f64 / steps as f64;
                let y = self.extent.1 * iy as f64 / steps as f64;
                let t = self.terrain.height(x, y);
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        for b in &self.buildings {
            hi = hi.max(b.max_height());
        }
        (lo, hi)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x <= self.extent.0 && y >= 0.0 && y <= self.extent.1
    }

    /// The unique free/occupied transition height of the column at (x, y):
    /// max of terrain and the roof envelope of the building covering it.
    pub fn surface_height(&self, x: f64, y: f64) -> f64 {
        let t = self.terrain.height(x, y);
        match self.building_at(x, y) {
            Some(b) => t.max(b.roof_height(x, y)),
            None => t,
        }
    }

    pub fn building_at(&self, x: f64, y: f64) -> Option<&Building> {
        self.index
            .candidates(x, y)
            .iter()
            .map(|&i| &self.buildings[i])
            .find(|b| b.contains(x, y))
    }

    /// Exact occupancy at a 3D point: 1 iff z <= surface(x, y).
    pub fn occupancy_oracle(&self, p: [f64; 3]) -> Result<u8> {
        if !self.contains_xy(p[0], p[1]) || p[2] < self.z_min || p[2] > self.z_max {
            return Err(Error::OutOfBounds(format!(
                "oracle query {p:?} outside scene volume"
            )));
        }
        Ok(u8::from(p[2] <= self.surface_height(p[0], p[1])))
    }

    pub fn in_forest(&self, x: f64, y: f64) -> bool {
        self.forest.iter().any(|r| r.contains(x, y))
    }

    pub fn in_water(&self, x: f64, y: f64) -> bool {
        self.water.iter().any(|r| r.contains(x, y))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SpatialIndex {
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl SpatialIndex {
    fn build(extent: (f64, f64), buildings: &[Building]) -> SpatialIndex {
        let cell = 16.0f64;
        let nx = (extent.0 / cell).ceil().max(1.0) as usize;
        let ny = (extent.1 / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, b) in buildings.iter().enumerate() {
            let (x0, y0, x1, y1) = b.bounding_box();
            let cx0 = ((x0 / cell).floor().max(0.0) as usize).min(nx - 1);
            let cx1 = ((x1 / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy0 = ((y0 / cell).floor().max(0.0) as usize).min(ny - 1);
            let cy1 = ((y1 / cell).floor().max(0.0) as usize).min(ny - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    buckets[cy * nx + cx].push(i);
                }
            }
        }
        SpatialIndex { cell, nx, ny, buckets }
    }

    fn candidates(&self, x: f64, y: f64) -> &[usize] {
        let cx = ((x / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let cy = ((y / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        &self.buckets[cy * self.nx + cx]
    }
}
