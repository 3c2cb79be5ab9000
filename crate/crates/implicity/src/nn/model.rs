//! The assembled occupancy model: point encoder + plane U-Net, image
//! encoder, and decoder, with bilinear feature-plane lookups.

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{Decoder, DecoderCache};
use super::grad::{Grads, Module};
use super::hourglass::{ImageEncCache, ImageEncoder};
use super::pointnet::{PointEncCache, PointEncoder};
use super::scalar::Scalar;
use super::unet::{UNet, UNetCache};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Zero,
    Mono,
    Stereo,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Zero => "zero",
            Variant::Mono => "mono",
            Variant::Stereo => "stereo",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "zero" => Ok(Variant::Zero),
            "mono" => Ok(Variant::Mono),
            "stereo" => Ok(Variant::Stereo),
            other => Err(Error::InvalidConfig(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Hidden feature width.
    pub d: usize,
    /// Shape feature plane resolution and cell size, meters.
    pub psi_res: usize,
    pub psi_cell: f64,
    /// Ortho-image input resolution and cell size, meters.
    pub img_res: usize,
    pub img_cell: f64,
    pub unet_depth: usize,
    pub hourglass_stacks: usize,
    pub variant: Variant,
    /// Image normalization statistics, fixed at training time.
    pub img_mean: f64,
    pub img_std: f64,
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> ModelConfig {
        ModelConfig {
            d: 32,
            psi_res: 128,
            psi_cell: 0.5,
            img_res: 256,
            img_cell: 0.25,
            unet_depth: 5,
            hourglass_stacks: 1,
            variant,
            img_mean: 0.0,
            img_std: 1.0,
        }
    }

    /// World side length of the patch both planes cover.
    pub fn patch_side(&self) -> f64 {
        self.psi_res as f64 * self.psi_cell
    }

    pub fn xi_res(&self) -> usize {
        self.img_res / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.psi_res == 0 || self.img_res == 0 {
            return Err(Error::InvalidConfig("zero model dimension".into()));
        }
        let psi_extent = self.psi_res as f64 * self.psi_cell;
        let img_extent = self.img_res as f64 * self.img_cell;
        if (psi_extent - img_extent).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "plane extents differ: psi {psi_extent} m vs image {img_extent} m"
            )));
        }
        if self.psi_res % (1 << self.unet_depth) != 0 {
            return Err(Error::InvalidConfig(format!(
                "psi resolution {} not divisible by 2^{}",
                self.psi_res, self.unet_depth
            )));
        }
        if self.img_res % 16 != 0 {
            return Err(Error::InvalidConfig(format!(
                "image resolution {} not divisible by 16",
                self.img_res
            )));
        }
        if !(self.img_std > 0.0) {
            return Err(Error::InvalidConfig(format!("bad image std {}", self.img_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    pub cfg: ModelConfig,
    pub point_enc: PointEncoder<F>,
    pub unet: UNet<F>,
    pub img_enc: Option<ImageEncoder<F>>,
    pub dec: Decoder<F>,
}

pub struct ShapeCache<F: Scalar> {
    penc: PointEncCache<F>,
    unet: UNetCache<F>,
}

pub struct DecodeCache<F: Scalar> {
    dec: DecoderCache<F>,
    stencils: Vec<PlaneStencil>,
    has_xi: bool,
}

impl<F: Scalar> DecodeCache<F> {
    pub fn logits(&self) -> &Array1<F> {
        self.dec.logits()
    }
}

#[derive(Debug, Clone, Copy)]
struct PlaneStencil {
    ix0: usize,
    iy0: usize,
    ix1: usize,
    iy1: usize,
    fx: f64,
    fy: f64,
}

fn stencil(res: usize, x: f64, y: f64) -> PlaneStencil {
    let clamp = |v: f64| v.clamp(0.0, (res - 1) as f64);
    let u = clamp(x * res as f64 - 0.5);
    let v = clamp(y * res as f64 - 0.5);
    let ix0 = u.floor() as usize;
    let iy0 = v.floor() as usize;
    let ix1 = (ix0 + 1).min(res - 1);
    let iy1 = (iy0 + 1).min(res - 1);
    PlaneStencil { ix0, iy0, ix1, iy1, fx: u - ix0 as f64, fy: v - iy0 as f64 }
}

fn sample_plane<F: Scalar>(plane: &Array3<F>, s: &PlaneStencil, out: &mut [F]) {
    let (d, _, _) = plane.dim();
    let (wx0, wx1) = (F::cast(1.0 - s.fx), F::cast(s.fx));
    let (wy0, wy1) = (F::cast(1.0 - s.fy), F::cast(s.fy));
    for ch in 0..d {
        out[ch] = plane[(ch, s.iy0, s.ix0)] * wx0 * wy0
            + plane[(ch, s.iy0, s.ix1)] * wx1 * wy0
            + plane[(ch, s.iy1, s.ix0)] * wx0 * wy1
            + plane[(ch, s.iy1, s.ix1)] * wx1 * wy1;
    }
}

fn scatter_plane_grad<F: Scalar>(gplane: &mut Array3<F>, s: &PlaneStencil, g: &[F]) {
    let (wx0, wx1) = (F::cast(1.0 - s.fx), F::cast(s.fx));
    let (wy0, wy1) = (F::cast(1.0 - s.fy), F::cast(s.fy));
    for (ch, &gv) in g.iter().enumerate() {
        gplane[(ch, s.iy0, s.ix0)] = gplane[(ch, s.iy0, s.ix0)] + gv * wx0 * wy0;
        gplane[(ch, s.iy0, s.ix1)] = gplane[(ch, s.iy0, s.ix1)] + gv * wx1 * wy0;
        gplane[(ch, s.iy1, s.ix0)] = gplane[(ch, s.iy1, s.ix0)] + gv * wx0 * wy1;
        gplane[(ch, s.iy1, s.ix1)] = gplane[(ch, s.iy1, s.ix1)] + gv * wx1 * wy1;
    }
}

impl<F: Scalar> Model<F> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Model<F>> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point_enc = PointEncoder::new(cfg.d, cfg.psi_res, &mut rng);
        let unet = UNet::new("unet", cfg.d, cfg.unet_depth, &mut rng);
        let img_enc = match cfg.variant {
            Variant::Zero => None,
            _ => Some(ImageEncoder::new(cfg.d, cfg.hourglass_stacks, &mut rng)),
        };
        let dec = Decoder::new(cfg.d, &mut rng);
        Ok(Model { cfg: *cfg, point_enc, unet, img_enc, dec })
    }

    /// Normalized patch cloud -> psi feature plane.
    pub fn encode_shape(&self, points: &Array2<F>) -> Result<(Array3<F>, ShapeCache<F>)> {
        let (plane0, penc) = self.point_enc.forward(points)?;
        let (psi, unet) = self.unet.forward(&plane0)?;
        Ok((psi, ShapeCache { penc, unet }))
    }

    /// Normalized image stack -> xi feature plane. Mono input carries one
    /// channel and is duplicated; stereo needs two.
    pub fn encode_images(&self, images: &Array3<F>) -> Result<(Array3<F>, ImageEncCache<F>)> {
        let enc = self.img_enc.as_ref().ok_or_else(|| {
            Error::InvalidConfig("variant zero has no image encoder".into())
        })?;
        let c = images.dim().0;
        let input = match (self.cfg.variant, c) {
            (Variant::Stereo, 2) => images.clone(),
            (Variant::Mono, 1) => {
                let ch = images.index_axis(ndarray::Axis(0), 0);
                ndarray::stack(ndarray::Axis(0), &[ch, ch]).expect("mono duplicate")
            }
            (v, c) => {
                return Err(Error::ShapeMismatch(format!(
                    "variant {} expects {} image channel(s), got {c}",
                    v.as_str(),
                    if v == Variant::Stereo { 2 } else { 1 }
                )))
            }
        };
        enc.forward(&input)
    }

    /// Decode occupancy probabilities at normalized query points given the
    /// encoded planes. xi is None for the zero variant.
    pub fn decode(
        &self,
        queries: &Array2<F>,
        psi: &Array3<F>,
        xi: Option<&Array3<F>>,
    ) -> Result<(Array1<F>, DecodeCache<F>)> {
        if psi.dim() != (self.cfg.d, self.cfg.psi_res, self.cfg.psi_res) {
            return Err(Error::ShapeMismatch(format!("psi plane shape {:?}", psi.dim())));
        }
        if let Some(xi) = xi {
            let r = self.cfg.xi_res();
            if xi.dim() != (self.cfg.d, r, r) {
                return Err(Error::ShapeMismatch(format!("xi plane shape {:?}", xi.dim())));
            }
        }
        let n = queries.nrows();
        let d = self.cfg.d;
        let mut code = Array2::<F>::zeros((n, d));
        let mut stencils = Vec::with_capacity(2 * n);
        let mut buf = vec![F::zero(); d];
        for i in 0..n {
            let (x, y) = (queries[(i, 0)].to_f64(), queries[(i, 1)].to_f64());
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFiniteQuery { x, y });
            }
            let sp = stencil(self.cfg.psi_res, x, y);
            sample_plane(psi, &sp, &mut buf);
            for ch in 0..d {
                code[(i, ch)] = buf[ch];
            }
            stencils.push(sp);
            if let Some(xi) = xi {
                let sx = stencil(self.cfg.xi_res(), x, y);
                sample_plane(xi, &sx, &mut buf);
                for ch in 0..d {
                    code[(i, ch)] = code[(i, ch)] + buf[ch];
                }
                stencils.push(sx);
            }
        }
        let (probs, dec) = self.dec.forward(queries, &code);
        Ok((probs, DecodeCache { dec, stencils, has_xi: xi.is_some() }))
    }

    /// Backward from logits gradient through the decoder into plane
    /// gradients.
    pub fn decode_backward(
        &self,
        cache: &DecodeCache<F>,
        glogits: &Array1<F>,
        grads: &mut Grads<F>,
    ) -> (Array3<F>, Option<Array3<F>>) {
        let gcode = self.dec.backward(&cache.dec, glogits, grads);
        let d = self.cfg.d;
        let mut gpsi = Array3::<F>::zeros((d, self.cfg.psi_res, self.cfg.psi_res));
        let mut gxi = if cache.has_xi {
            let r = self.cfg.xi_res();
            Some(Array3::<F>::zeros((d, r, r)))
        } else {
            None
        };
        let step = if cache.has_xi { 2 } else { 1 };
        let mut row = vec![F::zero(); d];
        for i in 0..gcode.nrows() {
            for ch in 0..d {
                row[ch] = gcode[(i, ch)];
            }
            scatter_plane_grad(&mut gpsi, &cache.stencils[i * step], &row);
            if let Some(gxi) = gxi.as_mut() {
                scatter_plane_grad(gxi, &cache.stencils[i * step + 1], &row);
            }
        }
        (gpsi, gxi)
    }

    pub fn shape_backward(&self, cache: &ShapeCache<F>, gpsi: &Array3<F>, grads: &mut Grads<F>) {
        let gplane0 = self.unet.backward(&cache.unet, gpsi, grads);
        self.point_enc.backward(&cache.penc, &gplane0, grads);
    }

    pub fn images_backward(
        &self,
        cache: &ImageEncCache<F>,
        gxi: &Array3<F>,
        grads: &mut Grads<F>,
    ) {
        if let Some(enc) = self.img_enc.as_ref() {
            enc.backward(cache, gxi, grads);
        }
    }

    /// Convert a raw image stack to the normalized network input.
    pub fn normalize_images(&self, raw: &Array3<f64>) -> Array3<F> {
        let (mean, std) = (self.cfg.img_mean, self.cfg.img_std);
        raw.mapv(|v| F::cast((v - mean) / std))
    }
}

impl<F: Scalar> Module<F> for Model<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ndarray::ArrayD<F>)) {
        self.point_enc.visit(f);
        self.unet.visit(f);
        if let Some(e) = &self.img_enc {
            e.visit(f);
        }
        self.dec.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<F>)) {
        self.point_enc.visit_mut(f);
        self.unet.visit_mut(f);
        if let Some(e) = &mut self.img_enc {
            e.visit_mut(f);
        }
        self.dec.visit_mut(f);
    }
}

/// Tiny configuration for tests and gradient checks.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d: 4,
        psi_res: 8,
        psi_cell: 8.0,
        img_res: 16,
        img_cell: 4.0,
        unet_depth: 2,
        hourglass_stacks: 1,
        variant,
        img_mean: 0.0,
        img_std: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};

    fn inputs(seed: u64, n_pts: usize, n_q: usize) -> (Array2<f64>, Array3<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Array2::from_shape_fn((n_pts, 3), |_| rng.gen::<f64>());
        let img = Array3::from_shape_fn((2, 16, 16), |_| rng.gen::<f64>() - 0.5);
        let q = Array2::from_shape_fn((n_q, 3), |_| rng.gen::<f64>());
        (pts, img, q)
    }

    #[test]
    fn same_seed_same_params_different_seed_differs() {
        let cfg = tiny_config(Variant::Stereo);
        let a = Model::<f64>::init(&cfg, 3).unwrap();
        let b = Model::<f64>::init(&cfg, 3).unwrap();
        let c = Model::<f64>::init(&cfg, 4).unwrap();
        let mut same = true;
        a.visit(&mut |name, t| {
            let mut tb = None;
            b.visit(&mut |n2, t2| {
                if n2 == name {
                    tb = Some(t2.clone());
                }
            });
            if tb.as_ref() != Some(t) {
                same = false;
            }
        });
        assert!(same);
        let mut any_diff = false;
        a.visit(&mut |name, t| {
            let mut tc = None;
            c.visit(&mut |n2, t2| {
                if n2 == name {
                    tc = Some(t2.clone());
                }
            });
            if tc.as_ref() != Some(t) {
                any_diff = true;
            }
        });
        assert!(any_diff);
    }

    #[test]
    fn full_pipeline_shapes_and_probability_range() {
        let cfg = tiny_config(Variant::Stereo);
        let model = Model::<f64>::init(&cfg, 0).unwrap();
        let (pts, img, q) = inputs(1, 40, 100);
        let (psi, _) = model.encode_shape(&pts).unwrap();
        assert_eq!(psi.dim(), (4, 8, 8));
        let (xi, _) = model.encode_images(&img).unwrap();
        assert_eq!(xi.dim(), (4, 4, 4));
        let (probs, _) = model.decode(&q, &psi, Some(&xi)).unwrap();
        assert_eq!(probs.len(), 100);
        for &p in probs.iter() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn init_mean_prediction_is_uncommitted() {
        let cfg = tiny_config(Variant::Stereo);
        let model = Model::<f64>::init(&cfg, 5).unwrap();
        let (pts, img, q) = inputs(2, 60, 10_000);
        let (psi, _) = model.encode_shape(&pts).unwrap();
        let (xi, _) = model.encode_images(&img).unwrap();
        let (probs, _) = model.decode(&q, &psi, Some(&xi)).unwrap();
        let mean = probs.sum() / probs.len() as f64;
        assert!(mean > 0.2 && mean < 0.8, "mean prediction {mean}");
    }

    #[test]
    fn zero_variant_ignores_images_entirely() {
        let cfg = tiny_config(Variant::Zero);
        let model = Model::<f64>::init(&cfg, 1).unwrap();
        let (pts, img, q) = inputs(3, 30, 50);
        assert!(model.encode_images(&img).is_err());
        let (psi, _) = model.encode_shape(&pts).unwrap();
        let (p1, _) = model.decode(&q, &psi, None).unwrap();
        // Decoding with an explicit zero plane matches the absent plane.
        let zero = Array3::<f64>::zeros((4, 4, 4));
        let (p2, _) = model.decode(&q, &psi, Some(&zero)).unwrap();
        let diff = (&p1 - &p2).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(diff < 1e-15);
    }

    #[test]
    fn mono_matches_stereo_with_second_channel_zeroed() {
        let cfg_s = tiny_config(Variant::Stereo);
        let mut stereo = Model::<f64>::init(&cfg_s, 7).unwrap();
        // Kill the second input channel of the image stem.
        if let Some(enc) = stereo.img_enc.as_mut() {
            let sh = enc.stem0.w.shape().to_vec();
            for o in 0..sh[0] {
                for ki in 0..sh[2] {
                    for kj in 0..sh[3] {
                        enc.stem0.w[[o, 1, ki, kj]] = 0.0;
                    }
                }
            }
        }
        let mut mono = stereo.clone();
        mono.cfg.variant = Variant::Mono;
        let (_, img, _) = inputs(4, 10, 10);
        let (xi_s, _) = stereo.encode_images(&img).unwrap();
        let mono_img = img.slice(ndarray::s![0..1, .., ..]).to_owned();
        let (xi_m, _) = mono.encode_images(&mono_img).unwrap();
        let diff = (&xi_s - &xi_m).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn shape_plane_translates_with_the_input() {
        // Bigger plane so an interior region clears the receptive field of
        // the borders.
        let cfg = ModelConfig {
            d: 2,
            psi_res: 64,
            psi_cell: 1.0,
            img_res: 128,
            img_cell: 0.5,
            unet_depth: 2,
            hourglass_stacks: 1,
            variant: Variant::Zero,
            img_mean: 0.0,
            img_std: 1.0,
        };
        let model = Model::<f64>::init(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Points confined well inside; shift by 8 cells = 0.125.
        let n = 200;
        let pts = Array2::from_shape_fn((n, 3), |(_, j)| {
            if j == 2 {
                rng.gen::<f64>()
            } else {
                0.35 + 0.2 * rng.gen::<f64>()
            }
        });
        let shift_cells = 8usize;
        let shift = shift_cells as f64 / 64.0;
        let mut shifted = pts.clone();
        for i in 0..n {
            shifted[(i, 0)] += shift;
        }
        let (psi_a, _) = model.encode_shape(&pts).unwrap();
        let (psi_b, _) = model.encode_shape(&shifted).unwrap();
        // Compare interior cells: psi_b[y][x + 8] vs psi_a[y][x].
        let margin = 20;
        let mut max_dev: f64 = 0.0;
        for ch in 0..2 {
            for iy in margin..64 - margin {
                for ix in margin..64 - margin - shift_cells {
                    let dev = (psi_b[(ch, iy, ix + shift_cells)] - psi_a[(ch, iy, ix)]).abs();
                    max_dev = max_dev.max(dev);
                }
            }
        }
        assert!(max_dev < 1e-4, "interior translation deviation {max_dev}");
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let cfg = tiny_config(Variant::Stereo);
        let mut model = Model::<f64>::init(&cfg, 9).unwrap();
        let (pts, img, q) = inputs(5, 16, 8);
        let loss = |m: &Model<f64>| -> f64 {
            let (psi, _) = m.encode_shape(&pts).unwrap();
            let (xi, _) = m.encode_images(&img).unwrap();
            let (_, dc) = m.decode(&q, &psi, Some(&xi)).unwrap();
            dc.logits().mapv(|v| v * v).sum()
        };
        let (psi, sc) = model.encode_shape(&pts).unwrap();
        let (xi, ic) = model.encode_images(&img).unwrap();
        let (_, dc) = model.decode(&q, &psi, Some(&xi)).unwrap();
        let glog = dc.logits().mapv(|v| 2.0 * v);
        let mut grads = Grads::new();
        let (gpsi, gxi) = model.decode_backward(&dc, &glog, &mut grads);
        model.shape_backward(&sc, &gpsi, &mut grads);
        model.images_backward(&ic, &gxi.unwrap(), &mut grads);
        let eps = 1e-6;
        for name in ["point.fc_pos.w", "unet.mid.w", "img.hg0.u1.w", "dec.fc_c0.w"] {
            let g = grads.get(name).unwrap().clone();
            let flat = g.len() / 2;
            let probe = |m: &mut Model<f64>, delta: f64| {
                m.visit_mut(&mut |nm, t| {
                    if nm == name {
                        t.as_slice_mut().unwrap()[flat] += delta;
                    }
                });
            };
            probe(&mut model, eps);
            let up = loss(&model);
            probe(&mut model, -2.0 * eps);
            let down = loss(&model);
            probe(&mut model, eps);
            let num = (up - down) / (2.0 * eps);
            let ana = g.as_slice().unwrap()[flat];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6) < 1e-5,
                "{name}: {num} vs {ana}"
            );
        }
    }
}
