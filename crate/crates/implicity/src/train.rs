//! Training: BCE loss, patch augmentation, Adam with a triangular cyclical
//! learning rate, gradient accumulation, and early stopping on validation
//! DSM error.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, Array3, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::evaluate::compute_metrics;
use crate::extract::{crop_images, extract_dsm, ExtractionConfig};
use crate::nn::{Grads, Model, Module, Scalar, Variant};
use crate::patch::{median, PatchWindow, RegionRect};
use crate::sampler::sample_training_queries;
use crate::scene::{render_reference_dsm, GridSpec, OrthoPair, SceneModel};
use crate::sensor::PointCloud;
use crate::{Error, Result};

const BCE_EPS: f64 = 1e-7;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Peak learning rate is base_lr + cycle_amplitude.
    pub cycle_amplitude: f64,
    pub cycle_length: usize,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    /// Patches accumulated per optimizer step.
    pub accumulation: usize,
    pub batch: usize,
    pub queries_per_patch: usize,
    pub eval_every: usize,
    /// Evals without a >1% validation MAE improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Gaussian spread of surface query samples, meters.
    pub sigma_surface: f64,
    /// Grid spacing of the validation DSM, meters.
    pub val_spacing: f64,
    /// Debug mode: every training window is pinned to this origin.
    pub overfit_window: Option<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 5e-5,
            cycle_amplitude: 5e-4,
            cycle_length: 4000,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            accumulation: 64,
            batch: 1,
            queries_per_patch: 2048,
            eval_every: 25,
            patience: 3,
            max_steps: 300,
            seed: 0,
            sigma_surface: 0.4,
            val_spacing: 1.0,
            overfit_window: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.cycle_amplitude >= 0.0) {
            return Err(Error::InvalidConfig("non-positive learning rate".into()));
        }
        if self.cycle_length == 0 || self.accumulation == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("zero cycle/accumulation/batch".into()));
        }
        if self.queries_per_patch < 5 {
            return Err(Error::InvalidConfig("need at least 5 queries per patch".into()));
        }
        if self.eval_every == 0 || self.max_steps == 0 {
            return Err(Error::InvalidConfig("zero eval_every or max_steps".into()));
        }
        if !(self.sigma_surface > 0.0 && self.val_spacing > 0.0) {
            return Err(Error::InvalidConfig("non-positive sigma or spacing".into()));
        }
        Ok(())
    }
}

// ---- loss ----

/// Weighted BCE sum (not normalized) and the total weight. Probabilities
/// are clamped to [eps, 1-eps] before the logs.
pub fn bce_sum(o_hat: &[f64], o: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    if o_hat.len() != o.len() || o.len() != w.len() {
        return Err(Error::ShapeMismatch(format!(
            "bce lengths {} / {} / {}",
            o_hat.len(),
            o.len(),
            w.len()
        )));
    }
    let mut s = 0.0;
    let mut wsum = 0.0;
    for i in 0..o_hat.len() {
        let p = o_hat[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
        s -= w[i] * (o[i] * p.ln() + (1.0 - o[i]) * (1.0 - p).ln());
        wsum += w[i];
    }
    Ok((s, wsum))
}

/// Mean-normalized binary cross-entropy: -sum w (o ln p + (1-o) ln(1-p)) / sum w.
pub fn bce_loss(o_hat: &[f64], o: &[f64], w: &[f64]) -> Result<f64> {
    let (s, wsum) = bce_sum(o_hat, o, w)?;
    if !(wsum > 0.0) {
        return Err(Error::InvalidConfig(format!("total query weight {wsum}")));
    }
    Ok(s / wsum)
}

// ---- learning rate ----

/// Triangular cycle: base_lr at each cycle boundary, base_lr + amplitude at
/// the midpoint, linear in between.
pub fn cyclical_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let pos = (step % cfg.cycle_length) as f64 / cfg.cycle_length as f64;
    let tri = 1.0 - (2.0 * pos - 1.0).abs();
    cfg.base_lr + cfg.cycle_amplitude * tri
}

// ---- optimizer ----

/// Adam with bias correction; state tensors are keyed by parameter name so
/// the update order is fixed.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    m: BTreeMap<String, ArrayD<F>>,
    v: BTreeMap<String, ArrayD<F>>,
    t: usize,
    pub betas: (f64, f64),
    pub weight_decay: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(betas: (f64, f64), weight_decay: f64) -> Self {
        Adam { m: BTreeMap::new(), v: BTreeMap::new(), t: 0, betas, weight_decay }
    }

    pub fn step(&mut self, model: &mut dyn Module<F>, grads: &Grads<F>, lr: f64) {
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (fb1, fb2) = (F::cast(b1), F::cast(b2));
        let (f1b1, f1b2) = (F::cast(1.0 - b1), F::cast(1.0 - b2));
        let wd = F::cast(self.weight_decay);
        let lr_f = F::cast(lr);
        let eps = F::cast(ADAM_EPS);
        let (ic1, ic2) = (F::cast(1.0 / c1), F::cast(1.0 / c2));
        model.visit_mut(&mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.shape()));
            azip(m, v, p, g, |m, v, p, g| {
                let g = g + wd * *p;
                *m = fb1 * *m + f1b1 * g;
                *v = fb2 * *v + f1b2 * g * g;
                let mhat = *m * ic1;
                let vhat = *v * ic2;
                *p = *p - lr_f * mhat / (vhat.sqrt() + eps);
            });
        });
    }
}

fn azip<F: Scalar>(
    m: &mut ArrayD<F>,
    v: &mut ArrayD<F>,
    p: &mut ArrayD<F>,
    g: &ArrayD<F>,
    f: impl Fn(&mut F, &mut F, &mut F, F),
) {
    ndarray::Zip::from(m).and(v).and(p).and(g).for_each(|m, v, p, &g| f(m, v, p, g));
}

// ---- augmentation ----

/// One training patch in normalized window coordinates: the point cloud,
/// the optional raw image crop (row index along +y), and labeled queries.
#[derive(Debug, Clone)]
pub struct PatchBundle {
    pub points: Array2<f64>,
    pub images: Option<Array3<f64>>,
    pub queries: Array2<f64>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Flips about the window center, then `k` quarter turns counterclockwise.
fn rigid_xy(x: f64, y: f64, k: usize, flip_x: bool, flip_y: bool) -> (f64, f64) {
    let mut u = x - 0.5;
    let mut v = y - 0.5;
    if flip_x {
        u = -u;
    }
    if flip_y {
        v = -v;
    }
    for _ in 0..k {
        let t = u;
        u = -v;
        v = t;
    }
    (u + 0.5, v + 0.5)
}

fn rigid_rows(a: &Array2<f64>, k: usize, fx: bool, fy: bool) -> Array2<f64> {
    let mut out = a.clone();
    for i in 0..a.nrows() {
        let (x, y) = rigid_xy(a[(i, 0)], a[(i, 1)], k, fx, fy);
        out[(i, 0)] = x;
        out[(i, 1)] = y;
    }
    out
}

fn rigid_image(img: &Array3<f64>, k: usize, fx: bool, fy: bool) -> Array3<f64> {
    let (c, res, _) = img.dim();
    let mut out = Array3::zeros(img.raw_dim());
    for ch in 0..c {
        for iy in 0..res {
            for ix in 0..res {
                let x = (ix as f64 + 0.5) / res as f64;
                let y = (iy as f64 + 0.5) / res as f64;
                let (x2, y2) = rigid_xy(x, y, k, fx, fy);
                let ix2 = (x2 * res as f64 - 0.5).round() as usize;
                let iy2 = (y2 * res as f64 - 0.5).round() as usize;
                out[(ch, iy2, ix2)] = img[(ch, iy, ix)];
            }
        }
    }
    out
}

/// Apply one rigid window transform to all parts of a patch. Heights,
/// labels, and weights are untouched.
pub fn augment_patch(
    bundle: &PatchBundle,
    alpha_deg: u32,
    flip_x: bool,
    flip_y: bool,
) -> Result<PatchBundle> {
    if alpha_deg % 90 != 0 || alpha_deg >= 360 {
        return Err(Error::InvalidConfig(format!(
            "rotation {alpha_deg} deg is not a quarter turn"
        )));
    }
    let k = (alpha_deg / 90) as usize;
    Ok(PatchBundle {
        points: rigid_rows(&bundle.points, k, flip_x, flip_y),
        images: bundle.images.as_ref().map(|im| rigid_image(im, k, flip_x, flip_y)),
        queries: rigid_rows(&bundle.queries, k, flip_x, flip_y),
        labels: bundle.labels.clone(),
        weights: bundle.weights.clone(),
    })
}

// ---- patch preparation and evaluation ----

pub struct TrainInputs<'a> {
    pub scene: &'a SceneModel,
    pub cloud: &'a PointCloud,
    pub images: Option<&'a OrthoPair>,
    pub z_scale: f64,
    /// Rectangles windows are drawn from; each must fit a full window.
    pub train_regions: Vec<RegionRect>,
    pub val_region: RegionRect,
}

/// Assemble a normalized patch bundle for one window: in-window points,
/// image crop, and freshly sampled oracle-labeled queries.
pub fn prepare_patch(
    inp: &TrainInputs,
    model_cfg: &crate::nn::ModelConfig,
    patch: &PatchWindow,
    n_queries: usize,
    sigma: f64,
    seed: u64,
) -> Result<PatchBundle> {
    let (ox, oy) = patch.origin_xy;
    let side = patch.side;
    let pts: Vec<[f64; 3]> = inp
        .cloud
        .points
        .iter()
        .filter(|p| p[0] >= ox && p[0] <= ox + side && p[1] >= oy && p[1] <= oy + side)
        .map(|&p| patch.normalize_point(p))
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyPointSet(format!("window at ({ox:.2}, {oy:.2})")));
    }
    let mut points = Array2::zeros((pts.len(), 3));
    for (i, p) in pts.iter().enumerate() {
        for k in 0..3 {
            points[(i, k)] = p[k];
        }
    }
    let images = match (model_cfg.variant, inp.images) {
        (Variant::Zero, _) => None,
        (_, Some(pair)) => {
            Some(crop_images(pair, (ox, oy), model_cfg.img_res, model_cfg.img_cell)?)
        }
        (v, None) => {
            return Err(Error::InvalidConfig(format!(
                "variant {} needs ortho images",
                v.as_str()
            )))
        }
    };
    let qs = sample_training_queries(inp.scene, patch, n_queries, sigma, seed)?;
    let mut queries = Array2::zeros((qs.queries.len(), 3));
    let mut labels = Vec::with_capacity(qs.queries.len());
    let mut weights = Vec::with_capacity(qs.queries.len());
    for (i, q) in qs.queries.iter().enumerate() {
        let n = patch.normalize_point(q.x);
        for k in 0..3 {
            queries[(i, k)] = n[k];
        }
        labels.push(f64::from(q.o));
        weights.push(q.weight);
    }
    Ok(PatchBundle { points, images, queries, labels, weights })
}

/// Forward/backward over one bundle. Returns the unnormalized BCE sum, the
/// weight total, and gradients of the sum; the caller divides by the global
/// weight total after accumulation, which makes one accumulated step equal
/// a single step on the concatenated query set.
pub fn patch_loss_and_grads<F: Scalar>(
    model: &Model<F>,
    bundle: &PatchBundle,
) -> Result<(f64, f64, Grads<F>)> {
    let pts = bundle.points.mapv(F::cast);
    let (psi, sc) = model.encode_shape(&pts)?;
    let img_pack = match (&bundle.images, model.cfg.variant) {
        (Some(im), Variant::Stereo) => Some(model.normalize_images(im)),
        (Some(im), Variant::Mono) => {
            Some(model.normalize_images(&im.slice(ndarray::s![0..1, .., ..]).to_owned()))
        }
        _ => None,
    };
    let enc = match img_pack {
        Some(im) => Some(model.encode_images(&im)?),
        None => None,
    };
    let (xi, ic) = match enc {
        Some((xi, ic)) => (Some(xi), Some(ic)),
        None => (None, None),
    };
    let q = bundle.queries.mapv(F::cast);
    let (probs, dc) = model.decode(&q, &psi, xi.as_ref())?;
    let o_hat: Vec<f64> = probs.iter().map(|&p| p.to_f64()).collect();
    let (s, wsum) = bce_sum(&o_hat, &bundle.labels, &bundle.weights)?;
    // d(sum)/d(logit_i) = w_i (p_i - o_i); the clamp is ignored in the
    // gradient as usual.
    let glog = Array1::from_iter((0..o_hat.len()).map(|i| {
        F::cast(bundle.weights[i] * (o_hat[i] - bundle.labels[i]))
    }));
    let mut grads = Grads::new();
    let (gpsi, gxi) = model.decode_backward(&dc, &glog, &mut grads);
    model.shape_backward(&sc, &gpsi, &mut grads);
    if let (Some(ic), Some(gxi)) = (&ic, gxi) {
        model.images_backward(ic, &gxi, &mut grads);
    }
    Ok((s, wsum, grads))
}

// ---- training loop ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub val_rmse: Option<f64>,
    pub val_medae: Option<f64>,
}

pub fn write_train_log<W: Write>(rows: &[LogRow], mut w: W) -> Result<()> {
    writeln!(w, "step,lr,train_loss,val_mae,val_rmse,val_medae")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step,
            r.lr,
            r.train_loss,
            opt(r.val_mae),
            opt(r.val_rmse),
            opt(r.val_medae)
        )?;
    }
    Ok(())
}

pub struct TrainOutcome<F: Scalar> {
    /// Parameters at the best recorded validation MAE (final parameters if
    /// validation never ran).
    pub model: Model<F>,
    pub log: Vec<LogRow>,
    pub best_val_mae: Option<f64>,
    pub steps: usize,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Measure a model against the validation strip: extract a DSM and compare
/// with the analytic reference. Returns (MAE, RMSE, MedAE).
pub fn validate_model<F: Scalar>(
    model: &Model<F>,
    inp: &TrainInputs,
    val_spacing: f64,
) -> Result<(f64, f64, f64)> {
    let mut ecfg = ExtractionConfig::with_z_bounds(inp.scene.z_min, inp.scene.z_max);
    ecfg.dsm_spacing = val_spacing;
    ecfg.window = model.cfg.patch_side();
    ecfg.stride = ecfg.window;
    let region = inp.val_region;
    let (dsm, _) = extract_dsm(model, inp.cloud, inp.images, inp.z_scale, &region, &ecfg)?;
    let spec = GridSpec::covering(
        (region.x_min, region.y_min),
        region.width(),
        region.height(),
        val_spacing,
    );
    let (reference, _) = render_reference_dsm(inp.scene, &spec)?;
    let rep = compute_metrics(&dsm, &reference, None, None, None)?;
    let m = rep
        .overall
        .ok_or_else(|| Error::InvalidGrid("empty validation region".into()))?;
    Ok((m.mae, m.rmse, m.medae))
}

pub fn train<F: Scalar>(
    mut model: Model<F>,
    inp: &TrainInputs,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let side = model.cfg.patch_side();
    if inp.train_regions.is_empty() {
        return Err(Error::InvalidConfig("no training regions".into()));
    }
    for r in &inp.train_regions {
        if r.width() < side || r.height() < side {
            return Err(Error::InvalidConfig(format!(
                "training region {}x{} smaller than the {side} m window",
                r.width(),
                r.height()
            )));
        }
    }
    let areas: Vec<f64> = inp.train_regions.iter().map(|r| r.width() * r.height()).collect();
    let total_area: f64 = areas.iter().sum();

    let mut adam = Adam::<F>::new(cfg.betas, cfg.weight_decay);
    let mut log = Vec::new();
    let mut best: Option<(f64, Model<F>)> = None;
    let mut patience_best = f64::INFINITY;
    let mut since_improve = 0usize;
    let windows_per_step = cfg.accumulation * cfg.batch;

    'steps: for step in 0..cfg.max_steps {
        // Window descriptors are drawn up front from per-window seeds, so
        // the parallel evaluation below cannot perturb the RNG stream.
        let mut descs = Vec::with_capacity(windows_per_step);
        for i in 0..windows_per_step {
            let wseed = mix_seed(cfg.seed, step as u64, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(wseed);
            let origin = match cfg.overfit_window {
                Some(o) => o,
                None => {
                    let mut pick = rng.gen::<f64>() * total_area;
                    let mut ri = 0;
                    for (j, a) in areas.iter().enumerate() {
                        if pick < *a {
                            ri = j;
                            break;
                        }
                        pick -= a;
                        ri = j;
                    }
                    let r = &inp.train_regions[ri];
                    (
                        r.x_min + rng.gen::<f64>() * (r.width() - side),
                        r.y_min + rng.gen::<f64>() * (r.height() - side),
                    )
                }
            };
            let alpha = 90 * rng.gen_range(0..4u32);
            let flip_x = rng.gen::<bool>();
            let flip_y = rng.gen::<bool>();
            let qseed = rng.gen::<u64>();
            descs.push((origin, alpha, flip_x, flip_y, qseed));
        }

        let evals: Vec<Result<(f64, f64, Grads<F>)>> = descs
            .par_iter()
            .map(|&((ox, oy), alpha, fx, fy, qseed)| {
                let heights: Vec<f64> = inp
                    .cloud
                    .points
                    .iter()
                    .filter(|p| {
                        p[0] >= ox && p[0] <= ox + side && p[1] >= oy && p[1] <= oy + side
                    })
                    .map(|p| p[2])
                    .collect();
                if heights.is_empty() {
                    return Err(Error::EmptyPointSet(format!(
                        "training window at ({ox:.2}, {oy:.2})"
                    )));
                }
                let patch = PatchWindow::new((ox, oy), side, median(&heights), inp.z_scale)?;
                let bundle = prepare_patch(
                    inp,
                    &model.cfg,
                    &patch,
                    cfg.queries_per_patch,
                    cfg.sigma_surface,
                    qseed,
                )?;
                let bundle = augment_patch(&bundle, alpha, fx, fy)?;
                patch_loss_and_grads(&model, &bundle)
            })
            .collect();

        // Fixed-order merge keeps the accumulated step bit-reproducible.
        let mut s_total = 0.0;
        let mut w_total = 0.0;
        let mut grads = Grads::<F>::new();
        for e in evals {
            let (s, w, g) = e?;
            s_total += s;
            w_total += w;
            grads.merge(g);
        }
        let loss = s_total / w_total;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("bce sum {s_total} over weight {w_total}"),
            });
        }
        grads.scale(F::cast(1.0 / w_total));
        let lr = cyclical_lr(step, cfg);
        adam.step(&mut model, &grads, lr);

        let mut row = LogRow {
            step: step + 1,
            lr,
            train_loss: loss,
            val_mae: None,
            val_rmse: None,
            val_medae: None,
        };
        if (step + 1) % cfg.eval_every == 0 {
            let (mae, rmse, medae) = validate_model(&model, inp, cfg.val_spacing)?;
            row.val_mae = Some(mae);
            row.val_rmse = Some(rmse);
            row.val_medae = Some(medae);
            if best.as_ref().map_or(true, |(b, _)| mae < *b) {
                best = Some((mae, model.clone()));
            }
            if mae < 0.99 * patience_best {
                patience_best = mae;
                since_improve = 0;
            } else {
                since_improve += 1;
            }
            log.push(row);
            if since_improve >= cfg.patience {
                break 'steps;
            }
        } else {
            log.push(row);
        }
    }

    let steps = log.len();
    let (best_val_mae, model) = match best {
        Some((mae, m)) => (Some(mae), m),
        None => (None, model),
    };
    Ok(TrainOutcome { model, log, best_val_mae, steps })
}
