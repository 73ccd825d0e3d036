use std::fs;
use std::path::Path;

use anyhow::Context;
use coevo::data::{load_dataset, make_toy_dataset, write_dataset, Dataset, Split, TrainingSet};
use coevo::evaluation::{
    average_summaries, brightness_sweep, evaluate_model, evaluate_with, write_json, write_line_plot_svg, write_report,
    EvalOptions, EvalReport,
};
use coevo::geometry::obj::{read_obj, write_obj};
use coevo::geometry::make_sphere_template;
use coevo::img::{ImageRGB, ImageRGBA};
use coevo::renderer::{RenderSettings, Renderer, ViewSpec};
use coevo::training::{load_domain_adaptation, load_recon, run_training, Checkpoint, RunPaths};
use serde::Serialize;

use crate::args::{EvalArgs, MakeDataArgs, RenderArgs, SplitArg, TrainArgs, TranslateArgs};
use crate::config::{output_root, resolve_toy_spec, to_toml, RunConfig};
use crate::{CliError, CliResult};

const SOURCE_HASH: &str = env!("COEVO_SOURCE_HASH");

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(CliError::Runtime)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Runtime)
}

fn open_dataset(path: &Path) -> CliResult<Dataset> {
    load_dataset(path)
        .with_context(|| format!("cannot load dataset {}", path.display()))
        .map_err(CliError::Runtime)
}

fn open_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path)
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn make_data(args: MakeDataArgs) -> CliResult<()> {
    let spec = resolve_toy_spec(&args)?;
    let out = args.out.unwrap_or_else(|| output_root(None).join("data").join("toy"));
    log::info!("synthesizing {} objects into {}", spec.counts.iter().map(|c| c.1).sum::<usize>(), out.display());
    let ds = make_toy_dataset(&spec)?;
    write_dataset(&ds, &out).with_context(|| format!("cannot write dataset to {}", out.display()))?;
    write_file(&out.join("toy_spec.toml"), &to_toml(&spec)?)?;
    println!("wrote {} objects to {}", ds.objects.len(), out.display());
    Ok(())
}

/// Provenance written next to the resolved configuration.
#[derive(Serialize)]
struct RunInfo<'a> {
    source_hash: &'a str,
    version: &'a str,
    seed: u64,
    perturb_seed: u64,
    resumed_from: Option<&'a Path>,
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let config = RunConfig::resolve(&args)?;
    let dataset_path = config.dataset.clone().expect("resolved configs name a dataset");
    let ds = open_dataset(&dataset_path)?.split(Split::Train);
    let set = TrainingSet::new(ds, config.perturb)?;
    let run_dir = config.run_dir();
    let paths = RunPaths::new(&run_dir);
    let resume = args.resume.as_deref().map(open_checkpoint).transpose()?;
    if resume.is_none() && paths.latest_checkpoint()?.is_some() {
        return Err(CliError::Usage(format!(
            "{} already holds checkpoints; pass --resume or choose another --name",
            run_dir.display()
        )));
    }
    create_dir(&run_dir)?;
    write_file(&run_dir.join("config.toml"), &to_toml(&config)?)?;
    let info = RunInfo {
        source_hash: SOURCE_HASH,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.train.seed,
        perturb_seed: config.perturb.seed,
        resumed_from: args.resume.as_deref(),
    };
    write_file(
        &run_dir.join("run.json"),
        &(serde_json::to_string_pretty(&info).map_err(|e| CliError::Runtime(e.into()))? + "\n"),
    )?;
    log::info!(
        "training on {} objects for {} cycles into {}",
        set.len(),
        config.train.cycles,
        run_dir.display()
    );
    let outcome = run_training(&config.train, &set, Some(&paths), resume.as_ref(), |_, report| {
        println!(
            "cycle {} done: content loss {:.5} -> {:.5}, reconstruction loss {:.5} -> {:.5} ({:.0}s)",
            report.cycle + 1,
            report.content_first,
            report.content_last,
            report.recon_first,
            report.recon_last,
            report.seconds
        );
        Ok(())
    })?;
    println!(
        "finished {} cycles; checkpoints in {}",
        outcome.state.cycle_index,
        paths.checkpoint_dir().display()
    );
    Ok(())
}

fn select_split(ds: Dataset, split: SplitArg) -> Dataset {
    match split {
        SplitArg::Train => ds.split(Split::Train),
        SplitArg::Test => ds.split(Split::Test),
        SplitArg::All => ds,
    }
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    if args.view_stride == 0 {
        return Err(CliError::Usage("--view-stride must be positive".into()));
    }
    let ds = select_split(open_dataset(&args.dataset)?, args.split);
    if ds.objects.is_empty() {
        return Err(CliError::Usage(format!("the {:?} split of the dataset is empty", args.split).to_lowercase()));
    }
    let out = args.out.clone().unwrap_or_else(|| output_root(None).join("eval"));
    create_dir(&out)?;
    let opts = EvalOptions {
        brightness_sigma: args.brightness_sigma,
        seed: args.seed,
        view_stride: args.view_stride,
        ..EvalOptions::default()
    };
    if args.brightness_sigma < 0.0 {
        return Err(CliError::Usage("--brightness-sigma must be non-negative".into()));
    }

    if args.ground_truth {
        let by_id: std::collections::HashMap<String, _> =
            ds.objects.iter().map(|o| (o.object_id.clone(), o.mesh.clone())).collect();
        let mut ids = ds.objects.iter().filter(|o| o.mesh.is_some()).map(|o| o.object_id.clone());
        let report = evaluate_with(&ds, &opts, |images| {
            let id = ids.next().expect("one call per object with ground truth");
            Ok(vec![by_id[&id].clone().expect("filtered"); images.len()])
        })?;
        write_report(&report, &out)?;
        print_summary("ground truth", &report);
        return Ok(());
    }

    let mut summaries = Vec::new();
    for (k, path) in args.checkpoint.iter().enumerate() {
        let ck = open_checkpoint(path)?;
        let mut recon = load_recon(&ck)?;
        if recon.size != ds.image_size {
            return Err(CliError::Usage(format!(
                "checkpoint {} expects {2}x{2} images but the dataset has {1}x{1}",
                path.display(),
                ds.image_size,
                recon.size
            )));
        }
        let run_dir = out.join(format!("run_{k}"));
        let report = evaluate_model(&mut recon, &ds, &opts)?;
        write_report(&report, &run_dir)?;
        print_summary(&path.display().to_string(), &report);
        summaries.push(report.summary);

        if let Some(sigmas) = &args.sweep {
            if sigmas.iter().any(|&s| !(s >= 0.0)) {
                return Err(CliError::Usage("sweep sigmas must be non-negative".into()));
            }
            let rows = brightness_sweep(&mut recon, &ds, sigmas, &opts)?;
            let table: Vec<serde_json::Value> = rows
                .iter()
                .map(|(s, r)| serde_json::json!({ "brightness_sigma": s, "mean_iou": r.mean_iou, "per_class": r.per_class }))
                .collect();
            write_json(&table, &run_dir.join("sweep.json"))?;
            let points: Vec<(f64, f64)> = rows.iter().map(|(s, r)| (*s, r.mean_iou)).collect();
            write_line_plot_svg(&points, "brightness sigma", "mean 3D IoU", &run_dir.join("sweep.svg"))?;
            for (s, iou) in &points {
                println!("  sigma {s}: mean IoU {iou:.4}");
            }
        }
    }
    let avg = average_summaries(&summaries)?;
    write_json(&avg, &out.join("summary.json"))?;
    println!("mean IoU over {} run(s): {:.4}", summaries.len(), avg.mean_iou);
    Ok(())
}

fn print_summary(label: &str, report: &EvalReport) {
    let s = &report.summary;
    println!("{label}: mean IoU {:.4} over {} images", s.mean_iou, s.evaluated);
    for (class, v) in &s.per_class {
        println!("  {class}: {v:.4}");
    }
    if s.skipped > 0 {
        println!("  skipped {} object(s) without ground truth", s.skipped);
    }
    if s.non_watertight > 0 {
        println!("  warning: {} non-watertight mesh(es)", s.non_watertight);
    }
}

fn load_rgba(path: &Path) -> CliResult<ImageRGBA> {
    let rgb = ImageRGB::load_png(path)?;
    Ok(ImageRGBA::from_rgb(&rgb))
}

pub fn render(args: RenderArgs) -> CliResult<()> {
    if args.views == 0 || args.size == 0 || !(args.smoothing > 0.0) {
        return Err(CliError::Usage("--views, --size and --smoothing must be positive".into()));
    }
    let (mesh, size) = match (&args.mesh, &args.checkpoint) {
        (Some(m), _) => (read_obj(m)?, args.size),
        (None, Some(ck)) => {
            let ck = open_checkpoint(ck)?;
            let mut recon = load_recon(&ck)?;
            let input = load_rgba(args.input.as_deref().expect("clap requires --input"))?;
            let mesh = recon.reconstruct(&[input], &make_sphere_template())?.remove(0);
            (mesh, args.size)
        }
        (None, None) => return Err(CliError::Usage("pass --mesh or --checkpoint with --input".into())),
    };
    create_dir(&args.out)?;
    if args.checkpoint.is_some() {
        write_obj(&mesh, &args.out.join("mesh.obj"))?;
    }
    let renderer = Renderer::new(RenderSettings::with_smoothing(args.smoothing));
    for k in 0..args.views {
        let azimuth = args.azimuth + 360.0 * k as f64 / args.views as f64;
        let view = ViewSpec::new(azimuth, args.elevation, size);
        view.validate()?;
        let path = args.out.join(format!("render_{k:02}.png"));
        renderer.render_image(&mesh, &view).save_png(&path)?;
    }
    println!("wrote {} rendering(s) to {}", args.views, args.out.display());
    Ok(())
}

pub fn translate(args: TranslateArgs) -> CliResult<()> {
    let ck = open_checkpoint(&args.checkpoint)?;
    let mut da = load_domain_adaptation(&ck)?;
    let inputs: Vec<ImageRGBA> = args.input.iter().map(|p| load_rgba(p)).collect::<CliResult<_>>()?;
    if let Some(bad) = inputs.iter().position(|i| i.size != ck.header.image_size) {
        return Err(CliError::Usage(format!(
            "{} is {2}x{2} but the checkpoint expects {1}x{1}",
            args.input[bad].display(),
            ck.header.image_size,
            inputs[bad].size
        )));
    }
    create_dir(&args.out)?;
    let pseudo = da.i2r.translate(&inputs)?;
    let roundtrip = da.r2i.translate(&pseudo)?;
    for ((path, p), r) in args.input.iter().zip(&pseudo).zip(&roundtrip) {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        p.save_png(&args.out.join(format!("{stem}_i2r.png")))?;
        r.rgb().save_png(&args.out.join(format!("{stem}_r2i.png")))?;
    }
    println!("wrote {} translation(s) to {}", inputs.len(), args.out.display());
    Ok(())
}
