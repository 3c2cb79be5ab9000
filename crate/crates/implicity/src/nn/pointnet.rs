//! Point-cloud shape encoder: per-point residual blocks with per-cell
//! max-pool context, then mean scatter onto a feature plane.

use ndarray::{Array2, Array3, ArrayD, Axis};
use rand_chacha::ChaCha8Rng;

use super::grad::{Grads, Module};
use super::layers::{concat_channels2, Linear, ResnetBlockFC, ResnetCache};
use super::scalar::Scalar;
use crate::{Error, Result};

pub const N_POINT_BLOCKS: usize = 5;

#[derive(Debug, Clone)]
pub struct PointEncoder<F: Scalar> {
    pub fc_pos: Linear<F>,
    pub blocks: Vec<ResnetBlockFC<F>>,
    pub fc_c: Linear<F>,
    pub plane_res: usize,
}

pub struct PointEncCache<F: Scalar> {
    cells: Vec<usize>,
    x: Array2<F>,
    block_caches: Vec<ResnetCache<F>>,
    /// Per pooling stage: argmax point index per (cell, channel).
    argmax: Vec<Vec<usize>>,
    net_final: Array2<F>,
    counts: Vec<usize>,
}

impl<F: Scalar> PointEncoder<F> {
    pub fn new(d: usize, plane_res: usize, rng: &mut ChaCha8Rng) -> Self {
        let fc_pos = Linear::new("point.fc_pos", 3, 2 * d, rng);
        let mut blocks = Vec::new();
        for i in 0..N_POINT_BLOCKS {
            blocks.push(ResnetBlockFC::new(&format!("point.block{i}"), 2 * d, d, d, rng));
        }
        let fc_c = Linear::new("point.fc_c", d, d, rng);
        PointEncoder { fc_pos, blocks, fc_c, plane_res }
    }

    pub fn d(&self) -> usize {
        self.fc_c.n_out()
    }

    fn cell_of(&self, p: &[F; 3]) -> Result<usize> {
        let res = self.plane_res;
        let (x, y) = (p[0].to_f64(), p[1].to_f64());
        for v in [x, y] {
            if !(-0.2..=1.2).contains(&v) {
                return Err(Error::OutOfBounds(format!(
                    "normalized plane coordinate {v} outside [-0.2, 1.2]"
                )));
            }
        }
        // Heights are centered on the patch median and scaled by a global
        // factor; tall structures land well outside [0, 1], which is fine.
        let z = p[2].to_f64();
        if !z.is_finite() || z.abs() > 1e3 {
            return Err(Error::OutOfBounds(format!("normalized height {z} implausible")));
        }
        let ix = ((x * res as f64).floor() as isize).clamp(0, res as isize - 1) as usize;
        let iy = ((y * res as f64).floor() as isize).clamp(0, res as isize - 1) as usize;
        Ok(iy * res + ix)
    }

    /// Max over the points of each cell, broadcast back to the points.
    /// Ties break to the earliest point, keeping the reduction order fixed.
    fn pool_max(
        &self,
        net: &Array2<F>,
        cells: &[usize],
    ) -> (Array2<F>, Vec<usize>) {
        let (n, d) = net.dim();
        let n_cells = self.plane_res * self.plane_res;
        let neg = F::neg_infinity();
        let mut cell_max = vec![neg; n_cells * d];
        let mut cell_arg = vec![usize::MAX; n_cells * d];
        for i in 0..n {
            let c = cells[i];
            for ch in 0..d {
                let v = net[(i, ch)];
                if v > cell_max[c * d + ch] {
                    cell_max[c * d + ch] = v;
                    cell_arg[c * d + ch] = i;
                }
            }
        }
        let mut pooled = Array2::<F>::zeros((n, d));
        for i in 0..n {
            let c = cells[i];
            for ch in 0..d {
                pooled[(i, ch)] = cell_max[c * d + ch];
            }
        }
        (pooled, cell_arg)
    }

    pub fn forward(&self, points: &Array2<F>) -> Result<(Array3<F>, PointEncCache<F>)> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::EmptyPointSet("point encoder needs at least one point".into()));
        }
        let mut cells = Vec::with_capacity(n);
        for row in points.axis_iter(Axis(0)) {
            cells.push(self.cell_of(&[row[0], row[1], row[2]])?);
        }
        let mut block_caches = Vec::new();
        let mut argmax = Vec::new();

        let h0 = self.fc_pos.forward(points);
        let (mut net, c0) = self.blocks[0].forward(&h0);
        block_caches.push(c0);
        for blk in &self.blocks[1..] {
            let (pooled, arg) = self.pool_max(&net, &cells);
            argmax.push(arg);
            let input = concat_channels2(&net, &pooled);
            let (next, cache) = blk.forward(&input);
            block_caches.push(cache);
            net = next;
        }
        let feat = self.fc_c.forward(&net);

        // Mean scatter onto the plane.
        let res = self.plane_res;
        let d = self.d();
        let mut plane = Array3::<F>::zeros((d, res, res));
        let mut counts = vec![0usize; res * res];
        for (i, &c) in cells.iter().enumerate() {
            counts[c] += 1;
            for ch in 0..d {
                let (iy, ix) = (c / res, c % res);
                plane[(ch, iy, ix)] = plane[(ch, iy, ix)] + feat[(i, ch)];
            }
        }
        for c in 0..res * res {
            if counts[c] > 1 {
                let inv = F::cast(1.0 / counts[c] as f64);
                let (iy, ix) = (c / res, c % res);
                for ch in 0..d {
                    plane[(ch, iy, ix)] = plane[(ch, iy, ix)] * inv;
                }
            }
        }
        Ok((
            plane,
            PointEncCache {
                cells,
                x: points.clone(),
                block_caches,
                argmax,
                net_final: net,
                counts,
            },
        ))
    }

    pub fn backward(&self, cache: &PointEncCache<F>, gplane: &Array3<F>, grads: &mut Grads<F>) {
        let res = self.plane_res;
        let d = self.d();
        let n = cache.cells.len();
        // Scatter-mean backward.
        let mut gfeat = Array2::<F>::zeros((n, d));
        for (i, &c) in cache.cells.iter().enumerate() {
            let inv = F::cast(1.0 / cache.counts[c] as f64);
            let (iy, ix) = (c / res, c % res);
            for ch in 0..d {
                gfeat[(i, ch)] = gplane[(ch, iy, ix)] * inv;
            }
        }
        let mut gnet = self.fc_c.backward(&cache.net_final, &gfeat, grads);
        for bi in (1..self.blocks.len()).rev() {
            let ginput = self.blocks[bi].backward(&cache.block_caches[bi], &gnet, grads);
            let (gn, gpooled) = {
                let (a, b) = ginput.view().split_at(Axis(1), d);
                (a.to_owned(), b.to_owned())
            };
            // Route pooled gradients to the argmax points.
            let arg = &cache.argmax[bi - 1];
            let mut gprev = gn;
            for i in 0..n {
                let c = cache.cells[i];
                for ch in 0..d {
                    let j = arg[c * d + ch];
                    if j != usize::MAX {
                        gprev[(j, ch)] = gprev[(j, ch)] + gpooled[(i, ch)];
                    }
                }
            }
            gnet = gprev;
        }
        let gh0 = self.blocks[0].backward(&cache.block_caches[0], &gnet, grads);
        let _ = self.fc_pos.backward(&cache.x, &gh0, grads);
    }
}

impl<F: Scalar> Module<F> for PointEncoder<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        self.fc_pos.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.fc_c.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        self.fc_pos.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.fc_c.visit_mut(f);
    }
}
