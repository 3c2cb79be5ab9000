use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use implicity::evaluate::{compute_metrics, signed_error_map};
use implicity::extract::{extract_dsm, ExtractionConfig};
use implicity::fusion::{conventional_dsm, FusionConfig};
use implicity::nn::checkpoint::save_checkpoint_file;
use implicity::nn::{Model, ModelConfig, Variant};
use implicity::patch::RegionRect;
use implicity::scene::{
    generate_scene, render_ortho_pair, render_reference_dsm, GridSpec, OrthoConfig, SceneConfig,
};
use implicity::sensor::{simulate_point_cloud, SensorConfig};
use implicity::train::{train, write_train_log, TrainConfig, TrainInputs};

use crate::config::Resolver;
use crate::manifest::Manifest;
use crate::Ctx;

#[derive(Args)]
pub struct DemoArgs {
    /// Directory all demo artifacts go into.
    #[arg(long, default_value = "demo_out")]
    pub out_dir: PathBuf,

    /// zero, mono, or stereo.
    #[arg(long)]
    pub variant: Option<String>,

    #[arg(long)]
    pub max_steps: Option<usize>,
}

/// Small-but-real model: 32 m windows, half-meter image grid.
fn demo_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d: 8,
        psi_res: 32,
        psi_cell: 1.0,
        img_res: 64,
        img_cell: 0.5,
        unet_depth: 3,
        hourglass_stacks: 1,
        variant,
        img_mean: 0.0,
        img_std: 1.0,
    }
}

pub fn run(ctx: &Ctx, a: DemoArgs) -> Result<()> {
    let mut r = Resolver::new(&ctx.config);
    let variant = super::train::parse_variant(&r.get(a.variant, "variant", "stereo".to_string())?)?;
    let max_steps = r.get(a.max_steps, "max_steps", 600)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir)?;
    let p = |name: &str| -> PathBuf { dir.join(name) };
    let mut man = Manifest::new("demo", ctx.seed, ctx.deterministic);

    // Scene: 128x128 m with terrain, buildings, and clutter regions.
    man.start_stage("synth");
    let extent = (128.0, 128.0);
    let scfg = SceneConfig::default_for_extent(extent);
    let scene = generate_scene(ctx.seed, &scfg)?;
    scene.write_text_file(&p("scene.txt"))?;

    man.start_stage("simulate");
    let sensor = SensorConfig { seed: ctx.seed.wrapping_add(1), ..SensorConfig::default() };
    let cloud = simulate_point_cloud(&scene, &sensor)?;
    cloud.write_file_auto(&p("cloud.ipc"))?;

    // Conventional baseline over the full extent; its signed error against
    // the reference doubles as the rectification-error field for view b.
    man.start_stage("fuse");
    let spacing = 0.5;
    let spec = GridSpec::covering((0.0, 0.0), extent.0, extent.1, spacing);
    let conv = conventional_dsm(&cloud, &spec, &FusionConfig::default())?;
    conv.write_ascii_file(&p("conventional.asc"))?;
    let (reference, _) = render_reference_dsm(&scene, &spec)?;
    let mut rect_error = signed_error_map(&conv, &reference)?;
    let nodata = rect_error.nodata();
    for v in rect_error.values_mut().iter_mut() {
        if *v == nodata {
            *v = 0.0;
        }
    }

    man.start_stage("render_ortho");
    let mut mcfg = demo_model_config(variant);
    let images = if variant == Variant::Zero {
        None
    } else {
        let ispec = GridSpec::covering((0.0, 0.0), extent.0, extent.1, mcfg.img_cell);
        let ocfg = OrthoConfig { seed: ctx.seed.wrapping_add(2), ..OrthoConfig::default() };
        let pair = render_ortho_pair(&scene, &ocfg, &ispec, &rect_error)?;
        pair.a.write_ascii_file(&p("ortho_a.asc"))?;
        pair.b.write_ascii_file(&p("ortho_b.asc"))?;
        let (mean, std) = super::train::image_stats(&pair);
        mcfg.img_mean = mean;
        mcfg.img_std = std;
        Some(pair)
    };

    // Vertical split: train on the west half, validate on the middle
    // strip, report on the untouched east strip.
    let z_scale = 10.0;
    let train_region = RegionRect { x_min: 0.0, y_min: 0.0, x_max: 64.0, y_max: 128.0 };
    let val_region = RegionRect { x_min: 64.0, y_min: 0.0, x_max: 96.0, y_max: 128.0 };
    let test_region = RegionRect { x_min: 96.0, y_min: 0.0, x_max: 128.0, y_max: 128.0 };
    let inputs = TrainInputs {
        scene: &scene,
        cloud: &cloud,
        images: images.as_ref(),
        z_scale,
        train_regions: vec![train_region],
        val_region,
    };
    let tcfg = TrainConfig {
        base_lr: 1e-3,
        cycle_amplitude: 0.0,
        accumulation: 2,
        queries_per_patch: 256,
        eval_every: 10,
        patience: 3,
        max_steps,
        seed: ctx.seed,
        ..TrainConfig::default()
    };

    man.start_stage("train");
    let model = Model::<f32>::init(&mcfg, ctx.seed)?;
    let outcome = train(model, &inputs, &tcfg)?;
    save_checkpoint_file(&outcome.model, &p("checkpoint.ckpt"))?;
    let logf = std::fs::File::create(p("train_log.csv"))?;
    write_train_log(&outcome.log, std::io::BufWriter::new(logf))?;

    man.start_stage("reconstruct");
    let mut ecfg = ExtractionConfig::with_z_bounds(scene.z_min, scene.z_max);
    ecfg.dsm_spacing = spacing;
    ecfg.window = mcfg.patch_side();
    ecfg.stride = ecfg.window / 2.0;
    let (dsm, _) =
        extract_dsm(&outcome.model, &cloud, images.as_ref(), z_scale, &test_region, &ecfg)?;
    dsm.write_ascii_file(&p("dsm.asc"))?;

    man.start_stage("evaluate");
    let tspec = GridSpec::covering(
        (test_region.x_min, test_region.y_min),
        test_region.width(),
        test_region.height(),
        spacing,
    );
    let (test_ref, masks) = render_reference_dsm(&scene, &tspec)?;
    let report = compute_metrics(
        &dsm,
        &test_ref,
        Some(&masks.building),
        Some(&masks.forest),
        None,
    )?;
    std::fs::write(p("report.txt"), report.to_text())?;
    signed_error_map(&dsm, &test_ref)?.write_ascii_file(&p("error_map.asc"))?;

    // Baseline scored on the same cells for context.
    let conv_test = conventional_dsm(
        &cloud,
        &tspec,
        &FusionConfig { grid_spacing: spacing, ..FusionConfig::default() },
    )?;
    let base_report = compute_metrics(
        &conv_test,
        &test_ref,
        Some(&masks.building),
        Some(&masks.forest),
        None,
    )?;
    std::fs::write(p("baseline_report.txt"), base_report.to_text())?;

    let mut artifacts = vec![
        "scene.txt",
        "cloud.ipc",
        "conventional.asc",
        "checkpoint.ckpt",
        "train_log.csv",
        "dsm.asc",
        "report.txt",
        "error_map.asc",
        "baseline_report.txt",
    ];
    if variant != Variant::Zero {
        artifacts.push("ortho_a.asc");
        artifacts.push("ortho_b.asc");
    }
    for name in artifacts {
        man.add_output(&p(name))?;
    }
    r.note("z_scale", z_scale);
    r.note("spacing", spacing);
    man.set_config(r.snapshot);
    man.write_to(&p("manifest.txt"))?;

    println!("== {} variant, test strip ==", variant.as_str());
    print!("{}", report.to_text());
    println!("== conventional baseline ==");
    print!("{}", base_report.to_text());
    Ok(())
}
