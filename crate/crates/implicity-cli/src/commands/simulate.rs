use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use implicity::raster::RasterGrid;
use implicity::scene::{render_ortho_pair, GridSpec, OrthoConfig, SceneModel};
use implicity::sensor::{simulate_point_cloud, PointCloud, SensorConfig};

use crate::config::Resolver;
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scene: PathBuf,

    /// Point cloud output; `.csv` writes text, anything else binary.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub density: Option<f64>,

    #[arg(long)]
    pub noise_sigma_z: Option<f64>,

    #[arg(long)]
    pub noise_sigma_xy: Option<f64>,

    #[arg(long)]
    pub outlier_fraction: Option<f64>,

    /// First ortho-image output (requires --ortho-b too).
    #[arg(long)]
    pub ortho_a: Option<PathBuf>,

    #[arg(long)]
    pub ortho_b: Option<PathBuf>,

    /// Ortho-image cell size, meters.
    #[arg(long)]
    pub img_cell: Option<f64>,

    /// Rectification-error raster warped into the second view; zero if
    /// omitted (the two views then differ only radiometrically).
    #[arg(long)]
    pub rect_error: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let mut man = Manifest::new("simulate", ctx.seed, ctx.deterministic);
    man.add_input(&a.scene)?;
    let scene = SceneModel::read_text_file(&a.scene)?;

    let mut scfg = SensorConfig { seed: ctx.seed, ..SensorConfig::default() };
    scfg.density = r.get(a.density, "density", scfg.density)?;
    scfg.noise_sigma_z = r.get(a.noise_sigma_z, "noise_sigma_z", scfg.noise_sigma_z)?;
    scfg.noise_sigma_xy = r.get(a.noise_sigma_xy, "noise_sigma_xy", scfg.noise_sigma_xy)?;
    scfg.outlier_fraction = r.get(a.outlier_fraction, "outlier_fraction", scfg.outlier_fraction)?;

    man.start_stage("simulate_cloud");
    let cloud = simulate_point_cloud(&scene, &scfg)?;
    cloud.write_file_auto(&a.out)?;
    man.add_output(&a.out)?;

    match (&a.ortho_a, &a.ortho_b) {
        (Some(pa), Some(pb)) => {
            man.start_stage("render_ortho");
            let cell = r.get(a.img_cell, "img_cell", 0.25)?;
            let spec = GridSpec::covering((0.0, 0.0), scene.extent.0, scene.extent.1, cell);
            let rect_error = match &a.rect_error {
                Some(p) => {
                    man.add_input(p)?;
                    RasterGrid::read_ascii_file(p)?
                }
                None => {
                    let mut g = spec.empty_grid()?;
                    g.values_mut().fill(0.0);
                    g
                }
            };
            let ocfg = OrthoConfig { seed: ctx.seed, ..OrthoConfig::default() };
            let pair = render_ortho_pair(&scene, &ocfg, &spec, &rect_error)?;
            pair.a.write_ascii_file(pa)?;
            pair.b.write_ascii_file(pb)?;
            man.add_output(pa)?;
            man.add_output(pb)?;
        }
        (None, None) => {}
        _ => bail!("--ortho-a and --ortho-b must be given together"),
    }

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    println!("{} points -> {}", cloud.len(), a.out.display());
    Ok(())
}

/// Axis-aligned bounding box of the cloud: (x_min, y_min, x_max, y_max).
pub fn cloud_bbox(cloud: &PointCloud) -> Result<(f64, f64, f64, f64)> {
    if cloud.is_empty() {
        bail!("empty point cloud");
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &cloud.points {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    Ok((x0, y0, x1, y1))
}
