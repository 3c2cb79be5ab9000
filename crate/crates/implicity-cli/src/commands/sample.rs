use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use implicity::patch::PatchWindow;
use implicity::sampler::sample_training_queries;
use implicity::scene::SceneModel;

use crate::config::{parse_region, Resolver};
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub scene: PathBuf,

    /// Query CSV output: x,y,z,o,w,tag.
    #[arg(long)]
    pub out: PathBuf,

    /// Square sampling window "x0,y0,x1,y1".
    #[arg(long)]
    pub region: String,

    #[arg(long)]
    pub count: Option<usize>,

    /// Gaussian spread of the surface-biased draws, meters.
    #[arg(long)]
    pub sigma: Option<f64>,
}

pub fn run(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let mut man = Manifest::new("sample", ctx.seed, ctx.deterministic);
    man.add_input(&a.scene)?;
    let scene = SceneModel::read_text_file(&a.scene)?;

    let region = parse_region(&a.region)?;
    r.note("region", &a.region);
    if (region.width() - region.height()).abs() > 1e-9 {
        bail!("sampling window must be square, got {}x{}", region.width(), region.height());
    }
    let count = r.get(a.count, "count", 2048)?;
    let sigma = r.get(a.sigma, "sigma", 0.4)?;

    // Queries come back in world coordinates, so the window's vertical
    // normalization is irrelevant here.
    let window = PatchWindow::new((region.x_min, region.y_min), region.width(), 0.0, 1.0)?;
    man.start_stage("sample");
    let set = sample_training_queries(&scene, &window, count, sigma, ctx.seed)?;
    let f = std::fs::File::create(&a.out)?;
    set.write_csv(std::io::BufWriter::new(f))?;
    man.add_output(&a.out)?;

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    println!("{} queries -> {}", set.queries.len(), a.out.display());
    Ok(())
}
