use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use implicity::scene::{generate_scene, render_reference_dsm, GridSpec, SceneConfig};

use crate::config::Resolver;
use crate::manifest::{manifest_path, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct SynthArgs {
    /// Scene description output (versioned text format).
    #[arg(long)]
    pub out: PathBuf,

    /// Scene extent, meters, as "W,H".
    #[arg(long)]
    pub extent: Option<String>,

    /// Buildings per square meter.
    #[arg(long)]
    pub building_density: Option<f64>,

    #[arg(long)]
    pub terrain_amplitude: Option<f64>,

    /// Flat terrain, snapped footprints, no clutter (fusion oracle case).
    #[arg(long)]
    pub flat: bool,

    /// Also render the reference DSM here.
    #[arg(long)]
    pub reference: Option<PathBuf>,

    /// Reference/mask cell size, meters.
    #[arg(long)]
    pub spacing: Option<f64>,

    #[arg(long)]
    pub building_mask: Option<PathBuf>,

    #[arg(long)]
    pub forest_mask: Option<PathBuf>,

    #[arg(long)]
    pub water_mask: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let extent_s = r.get(a.extent, "extent", "256,256".to_string())?;
    let (w, h) = parse_extent(&extent_s)?;
    let spacing = r.get(a.spacing, "spacing", 0.25)?;
    let flat = r.get(Some(a.flat).filter(|f| *f), "flat", false)?;

    let mut cfg = if flat {
        SceneConfig::degenerate_flat((w, h), spacing)
    } else {
        SceneConfig::default_for_extent((w, h))
    };
    if let Some(d) = r.get_opt(a.building_density, "building_density")? {
        cfg.building_density = d;
    }
    if let Some(t) = r.get_opt(a.terrain_amplitude, "terrain_amplitude")? {
        cfg.terrain_amplitude = t;
    }

    let mut man = Manifest::new("synth", ctx.seed, ctx.deterministic);
    man.start_stage("generate");
    let scene = generate_scene(ctx.seed, &cfg)?;
    scene.write_text_file(&a.out)?;
    man.add_output(&a.out)?;

    if a.reference.is_some() || a.building_mask.is_some() || a.forest_mask.is_some() {
        man.start_stage("render_reference");
        let spec = GridSpec::covering((0.0, 0.0), w, h, spacing);
        let (dsm, masks) = render_reference_dsm(&scene, &spec)?;
        for (path, grid) in [
            (&a.reference, &dsm),
            (&a.building_mask, &masks.building),
            (&a.forest_mask, &masks.forest),
            (&a.water_mask, &masks.water),
        ] {
            if let Some(p) = path {
                grid.write_ascii_file(p)?;
                man.add_output(p)?;
            }
        }
    }

    man.set_config(r.snapshot);
    man.write_to(&manifest_path(&a.out))?;
    println!("scene with {} buildings -> {}", scene.buildings.len(), a.out.display());
    Ok(())
}

pub fn parse_extent(s: &str) -> Result<(f64, f64)> {
    let (w, h) = s
        .split_once(',')
        .ok_or_else(|| anyhow::anyhow!("extent {s:?}: expected W,H"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}
