//! Latent feature planes aligned with world (x, y), read out bilinearly.

use ndarray::Array3;
use num_traits::Float;

use crate::{Error, Result};

/// H x W x d grid of latent codes. Data layout is (d, h, w); the h axis
/// increases with world y, the w axis with world x. Values are anchored at
/// cell centers.
#[derive(Debug, Clone)]
pub struct FeaturePlane<F = f64> {
    pub origin_xy: (f64, f64),
    pub cell_size: f64,
    pub data: Array3<F>,
}

impl<F: Float> FeaturePlane<F> {
    pub fn zeros(origin_xy: (f64, f64), cell_size: f64, h: usize, w: usize, d: usize) -> Result<Self> {
        if !(cell_size > 0.0) || h == 0 || w == 0 || d == 0 {
            return Err(Error::InvalidGrid(format!(
                "bad plane spec: {h}x{w}x{d} @ {cell_size}"
            )));
        }
        Ok(FeaturePlane {
            origin_xy,
            cell_size,
            data: Array3::from_elem((d, h, w), F::zero()),
        })
    }

    pub fn dim(&self) -> usize {
        self.data.dim().0
    }

    pub fn h(&self) -> usize {
        self.data.dim().1
    }

    pub fn w(&self) -> usize {
        self.data.dim().2
    }
}

/// Interpolation stencil for one query: corner indices and blend weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearStencil {
    pub ix0: usize,
    pub iy0: usize,
    pub ix1: usize,
    pub iy1: usize,
    /// Fraction toward ix1 / iy1.
    pub fx: f64,
    pub fy: f64,
}

/// Resolve a world (x, y) query to a bilinear stencil on a cell-centered
/// grid. Queries up to half a cell outside the plane extent are clamped to
/// the border; farther out is an error.
pub fn bilinear_stencil(
    origin_xy: (f64, f64),
    cell_size: f64,
    w: usize,
    h: usize,
    xy: (f64, f64),
) -> Result<BilinearStencil> {
    let (x, y) = xy;
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFiniteQuery { x, y });
    }
    // Continuous cell-center coordinates: u = 0 at the first cell center.
    let u = (x - origin_xy.0) / cell_size - 0.5;
    let v = (y - origin_xy.1) / cell_size - 0.5;
    // Extent check: half a cell beyond the plane edge is still accepted.
    if u < -1.0 || v < -1.0 || u > w as f64 || v > h as f64 {
        return Err(Error::OutOfBounds(format!(
            "query ({x}, {y}) beyond clamp margin of plane at {:?}",
            origin_xy
        )));
    }
    let uc = u.clamp(0.0, (w - 1) as f64);
    let vc = v.clamp(0.0, (h - 1) as f64);
    let ix0 = (uc.floor() as usize).min(w - 1);
    let iy0 = (vc.floor() as usize).min(h - 1);
    let ix1 = (ix0 + 1).min(w - 1);
    let iy1 = (iy0 + 1).min(h - 1);
    Ok(BilinearStencil {
        ix0,
        iy0,
        ix1,
        iy1,
        fx: uc - ix0 as f64,
        fy: vc - iy0 as f64,
    })
}

/// Read a d-vector code out of the plane at world (x, y) by bilinear
/// interpolation of the four surrounding cell-center codes.
pub fn bilinear_sample<F: Float>(plane: &FeaturePlane<F>, xy: (f64, f64)) -> Result<Vec<F>> {
    let s = bilinear_stencil(plane.origin_xy, plane.cell_size, plane.w(), plane.h(), xy)?;
    let (w00, w10, w01, w11) = stencil_weights(&s);
    let d = plane.dim();
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let v = plane.data[(k, s.iy0, s.ix0)] * F::from(w00).unwrap()
            + plane.data[(k, s.iy0, s.ix1)] * F::from(w10).unwrap()
            + plane.data[(k, s.iy1, s.ix0)] * F::from(w01).unwrap()
            + plane.data[(k, s.iy1, s.ix1)] * F::from(w11).unwrap();
        out.push(v);
    }
    Ok(out)
}

/// Corner weights (w00, w10, w01, w11) of a stencil, summing to 1.
pub fn stencil_weights(s: &BilinearStencil) -> (f64, f64, f64, f64) {
    let (fx, fy) = (s.fx, s.fy);
    (
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    )
}
