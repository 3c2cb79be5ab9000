//! Building prisms: rotated rectangular footprints with flat or gable
//! roofs and optional box dormers on the gable faces.

/// Box dormer on one gable face, in footprint-local coordinates.
/// `v_center` is the unsigned distance of the dormer center from the
/// ridge line; `face` selects the roof side (+1 or -1 in v).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dormer {
    pub face: i8,
    pub u_center: f64,
    pub v_center: f64,
    pub half_u: f64,
    pub half_v: f64,
    /// Absolute height of the flat dormer top.
    pub top_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Roof {
    Flat,
    Gable { ridge_rise: f64, dormers: Vec<Dormer> },
}

/// One building: a rotated rectangular prism from the terrain up to its
/// roof envelope. `eave_z` is absolute and lies above the terrain across
/// the whole footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub center: (f64, f64),
    /// Half extents along the local u (ridge) and v axes.
    pub half_len: f64,
    pub half_wid: f64,
    /// Footprint rotation, radians.
    pub angle: f64,
    pub eave_z: f64,
    pub roof: Roof,
    /// Panchromatic reflectance for ortho rendering.
    pub albedo: f64,
}

impl Building {
    pub fn world_to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        (dx * c + dy * s, -dx * s + dy * c)
    }

    pub fn local_to_world(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (
            self.center.0 + u * c - v * s,
            self.center.1 + u * s + v * c,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.world_to_local(x, y);
        u.abs() <= self.half_len && v.abs() <= self.half_wid
    }

    /// Roof envelope height over (x, y); only meaningful inside the
    /// footprint.
    pub fn roof_height(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.world_to_local(x, y);
        self.roof_height_local(u, v)
    }

    pub fn roof_height_local(&self, u: f64, v: f64) -> f64 {
        match &self.roof {
            Roof::Flat => self.eave_z,
            Roof::Gable { ridge_rise, dormers } => {
                let plane = self.eave_z + ridge_rise * (1.0 - v.abs() / self.half_wid);
                for d in dormers {
                    if (v.signum() as i8 == d.face || v == 0.0 && d.face == 1)
                        && (u - d.u_center).abs() <= d.half_u
                        && (v.abs() - d.v_center).abs() <= d.half_v
                    {
                        return plane.max(d.top_z);
                    }
                }
                plane
            }
        }
    }

    pub fn max_height(&self) -> f64 {
        match &self.roof {
            Roof::Flat => self.eave_z,
            Roof::Gable { ridge_rise, dormers } => {
                let mut z = self.eave_z + ridge_rise;
                for d in dormers {
                    z = z.max(d.top_z);
                }
                z
            }
        }
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            self.local_to_world(-self.half_len, -self.half_wid),
            self.local_to_world(self.half_len, -self.half_wid),
            self.local_to_world(self.half_len, self.half_wid),
            self.local_to_world(-self.half_len, self.half_wid),
        ]
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let cs = self.corners();
        let mut bb = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in cs {
            bb.0 = bb.0.min(x);
            bb.1 = bb.1.min(y);
            bb.2 = bb.2.max(x);
            bb.3 = bb.3.max(y);
        }
        bb
    }

    /// Separating-axis overlap test between two footprints, with an
    /// optional clearance gap in meters.
    pub fn overlaps(&self, other: &Building, gap: f64) -> bool {
        let a = self.corners();
        let b = other.corners();
        let axes = [
            self.angle.cos(),
            self.angle.sin(),
            other.angle.cos(),
            other.angle.sin(),
        ];
        let axis_list = [
            (axes[0], axes[1]),
            (-axes[1], axes[0]),
            (axes[2], axes[3]),
            (-axes[3], axes[2]),
        ];
        for (ax, ay) in axis_list {
            let proj = |pts: &[(f64, f64); 4]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (x, y) in pts {
                    let p = x * ax + y * ay;
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
                (lo, hi)
            };
            let (alo, ahi) = proj(&a);
            let (blo, bhi) = proj(&b);
            if ahi + gap < blo || bhi + gap < alo {
                return false;
            }
        }
        true
    }
}
