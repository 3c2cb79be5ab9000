use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use implicity::fusion::{conventional_dsm, FusionConfig};
use implicity::scene::GridSpec;
use implicity::sensor::PointCloud;

use crate::config::{parse_region, Resolver};
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub cloud: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Grid spacing, meters.
    #[arg(long)]
    pub spacing: Option<f64>,

    /// Output region "x0,y0,x1,y1"; cloud bounding box if omitted.
    #[arg(long)]
    pub region: Option<String>,

    #[arg(long)]
    pub despike_threshold: Option<f64>,

    #[arg(long)]
    pub idw_power: Option<f64>,
}

pub fn run(ctx: &Ctx, a: FuseArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let mut man = Manifest::new("fuse-dsm", ctx.seed, ctx.deterministic);
    man.add_input(&a.cloud)?;
    let cloud = PointCloud::read_file_auto(&a.cloud)?;

    let mut fcfg = FusionConfig::default();
    fcfg.grid_spacing = r.get(a.spacing, "spacing", fcfg.grid_spacing)?;
    fcfg.despike_threshold =
        r.get(a.despike_threshold, "despike_threshold", fcfg.despike_threshold)?;
    fcfg.idw_power = r.get(a.idw_power, "idw_power", fcfg.idw_power)?;

    let (x0, y0, x1, y1) = match r.get_opt(a.region, "region")? {
        Some(s) => {
            let rr = parse_region(&s)?;
            (rr.x_min, rr.y_min, rr.x_max, rr.y_max)
        }
        None => super::simulate::cloud_bbox(&cloud)?,
    };
    let spec = GridSpec::covering((x0, y0), x1 - x0, y1 - y0, fcfg.grid_spacing);

    man.start_stage("fuse");
    let dsm = conventional_dsm(&cloud, &spec, &fcfg)?;
    dsm.write_ascii_file(&a.out)?;
    man.add_output(&a.out)?;

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    println!("{}x{} DSM -> {}", dsm.n_rows(), dsm.n_cols(), a.out.display());
    Ok(())
}
