use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use implicity::evaluate::{compute_metrics, signed_error_map};
use implicity::raster::RasterGrid;

use crate::config::Resolver;
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,

    #[arg(long = "ref")]
    pub reference: PathBuf,

    #[arg(long)]
    pub building_mask: Option<PathBuf>,

    #[arg(long)]
    pub forest_mask: Option<PathBuf>,

    #[arg(long)]
    pub exclude: Option<PathBuf>,

    /// Metrics report output.
    #[arg(long)]
    pub out: PathBuf,

    /// Signed per-cell error raster output.
    #[arg(long)]
    pub error_map: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let r = Resolver::new(&ctx.config);
    let mut man = Manifest::new("evaluate", ctx.seed, ctx.deterministic);
    man.add_input(&a.pred)?;
    man.add_input(&a.reference)?;

    let pred = RasterGrid::read_ascii_file(&a.pred)?;
    let reference = RasterGrid::read_ascii_file(&a.reference)?;
    let load_opt = |man: &mut Manifest, p: &Option<PathBuf>| -> Result<Option<RasterGrid>> {
        match p {
            Some(p) => {
                man.add_input(p)?;
                Ok(Some(RasterGrid::read_ascii_file(p)?))
            }
            None => Ok(None),
        }
    };
    let building = load_opt(&mut man, &a.building_mask)?;
    let forest = load_opt(&mut man, &a.forest_mask)?;
    let exclude = load_opt(&mut man, &a.exclude)?;

    man.start_stage("evaluate");
    let report =
        compute_metrics(&pred, &reference, building.as_ref(), forest.as_ref(), exclude.as_ref())?;
    let text = report.to_text();
    std::fs::write(&a.out, &text)?;
    man.add_output(&a.out)?;
    if let Some(ref p) = a.error_map {
        signed_error_map(&pred, &reference)?.write_ascii_file(p)?;
        man.add_output(p)?;
    }

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    print!("{text}");
    Ok(())
}
