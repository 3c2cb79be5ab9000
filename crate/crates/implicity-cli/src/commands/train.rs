use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use implicity::nn::checkpoint::save_checkpoint_file;
use implicity::nn::{Model, ModelConfig, Variant};
use implicity::scene::{OrthoPair, SceneModel};
use implicity::sensor::PointCloud;
use implicity::train::{train, write_train_log, TrainConfig, TrainInputs};

use crate::config::{parse_region, Resolver};
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,

    #[arg(long)]
    pub cloud: PathBuf,

    #[arg(long)]
    pub ortho_a: Option<PathBuf>,

    #[arg(long)]
    pub ortho_b: Option<PathBuf>,

    /// zero, mono, or stereo.
    #[arg(long)]
    pub variant: Option<String>,

    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,

    /// Training-log CSV output.
    #[arg(long)]
    pub log: Option<PathBuf>,

    /// Training rectangle "x0,y0,x1,y1"; repeatable.
    #[arg(long = "train-region")]
    pub train_regions: Vec<String>,

    #[arg(long)]
    pub val_region: String,

    #[arg(long)]
    pub d: Option<usize>,

    #[arg(long)]
    pub max_steps: Option<usize>,

    #[arg(long)]
    pub base_lr: Option<f64>,

    #[arg(long)]
    pub z_scale: Option<f64>,
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    Ok(match s {
        "zero" => Variant::Zero,
        "mono" => Variant::Mono,
        "stereo" => Variant::Stereo,
        other => bail!("unknown variant {other:?} (expected zero, mono, or stereo)"),
    })
}

/// Mean and standard deviation pooled over both image channels; fixed into
/// the model config so extraction normalizes identically.
pub fn image_stats(pair: &OrthoPair) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for g in [&pair.a, &pair.b] {
        for &v in g.values().iter() {
            if !g.is_nodata(v) {
                n += 1;
                sum += v;
                sum2 += v * v;
            }
        }
    }
    let mean = sum / n.max(1) as f64;
    let var = (sum2 / n.max(1) as f64 - mean * mean).max(0.0);
    (mean, var.sqrt().max(1e-6))
}

pub struct ModelFlags {
    pub d: Option<usize>,
    pub variant: Option<String>,
}

pub fn resolve_model_config(r: &mut Resolver, f: ModelFlags) -> Result<ModelConfig> {
    let variant = parse_variant(&r.get(f.variant, "variant", "stereo".to_string())?)?;
    let mut cfg = ModelConfig::with_variant(variant);
    cfg.d = r.get(f.d, "d", cfg.d)?;
    cfg.psi_res = r.get(None, "psi_res", cfg.psi_res)?;
    cfg.psi_cell = r.get(None, "psi_cell", cfg.psi_cell)?;
    cfg.img_res = r.get(None, "img_res", cfg.img_res)?;
    cfg.img_cell = r.get(None, "img_cell", cfg.img_cell)?;
    cfg.unet_depth = r.get(None, "unet_depth", cfg.unet_depth)?;
    cfg.hourglass_stacks = r.get(None, "hourglass_stacks", cfg.hourglass_stacks)?;
    Ok(cfg)
}

pub fn resolve_train_config(
    r: &mut Resolver,
    seed: u64,
    max_steps: Option<usize>,
    base_lr: Option<f64>,
) -> Result<TrainConfig> {
    let mut t = TrainConfig { seed, ..TrainConfig::default() };
    t.base_lr = r.get(base_lr, "base_lr", t.base_lr)?;
    t.cycle_amplitude = r.get(None, "cycle_amplitude", t.cycle_amplitude)?;
    t.cycle_length = r.get(None, "cycle_length", t.cycle_length)?;
    t.accumulation = r.get(None, "accumulation", t.accumulation)?;
    t.queries_per_patch = r.get(None, "queries_per_patch", t.queries_per_patch)?;
    t.eval_every = r.get(None, "eval_every", t.eval_every)?;
    t.patience = r.get(None, "patience", t.patience)?;
    t.max_steps = r.get(max_steps, "max_steps", t.max_steps)?;
    t.sigma_surface = r.get(None, "sigma_surface", t.sigma_surface)?;
    t.val_spacing = r.get(None, "val_spacing", t.val_spacing)?;
    Ok(t)
}

pub fn load_ortho(a: &Option<PathBuf>, b: &Option<PathBuf>) -> Result<Option<OrthoPair>> {
    match (a, b) {
        (Some(pa), Some(pb)) => Ok(Some(OrthoPair {
            a: implicity::raster::RasterGrid::read_ascii_file(pa)?,
            b: implicity::raster::RasterGrid::read_ascii_file(pb)?,
        })),
        (None, None) => Ok(None),
        _ => bail!("--ortho-a and --ortho-b must be given together"),
    }
}

pub fn run(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let mut man = Manifest::new("train", ctx.seed, ctx.deterministic);
    man.add_input(&a.scene)?;
    man.add_input(&a.cloud)?;
    for p in [&a.ortho_a, &a.ortho_b].into_iter().flatten() {
        man.add_input(p)?;
    }

    let scene = SceneModel::read_text_file(&a.scene)?;
    let cloud = PointCloud::read_file_auto(&a.cloud)?;
    let images = load_ortho(&a.ortho_a, &a.ortho_b)?;

    let mut mcfg = resolve_model_config(&mut r, ModelFlags { d: a.d, variant: a.variant })?;
    if mcfg.variant != Variant::Zero && images.is_none() {
        bail!("variant {} needs --ortho-a/--ortho-b", mcfg.variant.as_str());
    }
    if let Some(ref pair) = images {
        let (mean, std) = image_stats(pair);
        mcfg.img_mean = mean;
        mcfg.img_std = std;
        r.note("img_mean", mean);
        r.note("img_std", std);
    }
    let tcfg = resolve_train_config(&mut r, ctx.seed, a.max_steps, a.base_lr)?;
    let z_scale = r.get(a.z_scale, "z_scale", 10.0)?;

    if a.train_regions.is_empty() {
        bail!("at least one --train-region is required");
    }
    let mut train_regions = Vec::new();
    for (i, s) in a.train_regions.iter().enumerate() {
        r.note(&format!("train_region_{i}"), s);
        train_regions.push(parse_region(s)?);
    }
    let val_region = parse_region(&a.val_region)?;
    r.note("val_region", &a.val_region);

    let inputs = TrainInputs {
        scene: &scene,
        cloud: &cloud,
        images: images.as_ref(),
        z_scale,
        train_regions,
        val_region,
    };

    man.start_stage("train");
    let model = Model::<f32>::init(&mcfg, ctx.seed)?;
    let outcome = train(model, &inputs, &tcfg)?;
    man.start_stage("save");
    save_checkpoint_file(&outcome.model, &a.out)?;
    man.add_output(&a.out)?;
    if let Some(ref log) = a.log {
        let f = std::fs::File::create(log)?;
        write_train_log(&outcome.log, std::io::BufWriter::new(f))?;
        man.add_output(log)?;
    }

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    let best = outcome
        .best_val_mae
        .map_or("n/a".to_string(), |m| format!("{m:.4} m"));
    println!("trained {} steps, best val MAE {best} -> {}", outcome.steps, a.out.display());
    Ok(())
}
