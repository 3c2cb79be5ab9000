use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use implicity::extract::{extract_dsm, ExtractionConfig};
use implicity::nn::checkpoint::load_checkpoint_file;
use implicity::nn::{Model, Variant};
use implicity::raster::RasterGrid;
use implicity::scene::OrthoPair;
use implicity::sensor::PointCloud;

use crate::config::{parse_region, Resolver};
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub cloud: PathBuf,

    /// Ortho pair as "a.asc,b.asc"; needed by mono and stereo variants.
    #[arg(long)]
    pub images: Option<String>,

    /// Output region "x0,y0,x1,y1".
    #[arg(long)]
    pub region: String,

    #[arg(long)]
    pub out: PathBuf,

    /// DSM grid spacing, meters.
    #[arg(long)]
    pub spacing: Option<f64>,

    #[arg(long)]
    pub z_min: Option<f64>,

    #[arg(long)]
    pub z_max: Option<f64>,

    #[arg(long)]
    pub z_scale: Option<f64>,
}

pub fn run(ctx: &Ctx, a: ReconstructArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let mut man = Manifest::new("reconstruct", ctx.seed, ctx.deterministic);
    man.add_input(&a.checkpoint)?;
    man.add_input(&a.cloud)?;

    let model: Model<f32> = load_checkpoint_file(&a.checkpoint)?;
    let cloud = PointCloud::read_file_auto(&a.cloud)?;
    let images = match &a.images {
        Some(s) => {
            let (pa, pb) = s
                .split_once(',')
                .ok_or_else(|| anyhow::anyhow!("--images expects a.asc,b.asc"))?;
            let (pa, pb) = (PathBuf::from(pa.trim()), PathBuf::from(pb.trim()));
            man.add_input(&pa)?;
            man.add_input(&pb)?;
            Some(OrthoPair {
                a: RasterGrid::read_ascii_file(&pa)?,
                b: RasterGrid::read_ascii_file(&pb)?,
            })
        }
        None => None,
    };
    if model.cfg.variant != Variant::Zero && images.is_none() {
        bail!("checkpoint variant {} needs --images", model.cfg.variant.as_str());
    }

    let region = parse_region(&a.region)?;
    r.note("region", &a.region);
    let z_scale = r.get(a.z_scale, "z_scale", 10.0)?;

    // Default vertical bounds: the cloud's z range padded by 10 m.
    let (mut zlo, mut zhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &cloud.points {
        zlo = zlo.min(p[2]);
        zhi = zhi.max(p[2]);
    }
    let z_min = r.get(a.z_min, "z_min", (zlo - 10.0).floor())?;
    let z_max = r.get(a.z_max, "z_max", (zhi + 10.0).ceil())?;

    let mut ecfg = ExtractionConfig::with_z_bounds(z_min, z_max);
    ecfg.dsm_spacing = r.get(a.spacing, "spacing", ecfg.dsm_spacing)?;
    ecfg.window = model.cfg.patch_side();
    ecfg.stride = r.get(None, "stride", ecfg.window / 2.0)?;
    r.note("window", ecfg.window);

    man.start_stage("extract");
    let (dsm, stats) = extract_dsm(&model, &cloud, images.as_ref(), z_scale, &region, &ecfg)?;
    dsm.write_ascii_file(&a.out)?;
    man.add_output(&a.out)?;

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    println!(
        "{}x{} DSM from {} windows, {} field queries -> {}",
        dsm.n_rows(),
        dsm.n_cols(),
        stats.windows,
        stats.decode_queries,
        a.out.display()
    );
    Ok(())
}
