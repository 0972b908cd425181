use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use medmus_core::evaluation::EvalOptions;
use medmus_core::geometry::io::{read_any_stack, read_geometry, read_volume, write_stack, write_volume};
use medmus_core::geometry::{project_to_frames, Interp};
use medmus_core::model::predict_volume;
use medmus_core::phantom::PhantomConfig;
use medmus_core::postproc::Connectivity;
use serde_json::json;

use super::eval::{evaluate_paths, write_report};
use super::postproc::postprocess_volume;
use super::scan::{reconstruct_any, write_any_volume};
use super::synth::synthesize;
use super::train::{load_cases, resolve, train_cases, write_outputs, Preset};
use super::{layered_config, require_exists};
use crate::layout::{Case, CHANNELS};
use crate::provenance::{Context, PROVENANCE_FILE};
use crate::usage;

/// Seed of the demonstration cohort.
pub const DEMO_SEED: u64 = 2024;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory for data, model, predictions and metrics.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEMO_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    train_count: usize,
    #[arg(long, default_value_t = 4)]
    test_count: usize,
    /// Phantom configuration overrides (JSON).
    #[arg(long)]
    phantom_config: Option<PathBuf>,
    /// Training configuration overrides (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_mem: bool,
    /// Stop training once the training-set DSC reaches this; 1 trains all epochs.
    #[arg(long, default_value_t = 0.6)]
    target_dsc: f64,
    /// Voxel size of the reconstructed volumes; defaults to the pixel spacing.
    #[arg(long)]
    spacing: Option<f64>,
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    if args.train_count == 0 || args.test_count == 0 {
        return Err(usage("--train-count and --test-count must be at least 1"));
    }
    if args.epochs == Some(0) {
        return Err(usage("--epochs must be at least 1"));
    }
    if !(0.0..=1.0).contains(&args.target_dsc) {
        return Err(usage("--target-dsc must lie in [0, 1]"));
    }
    if args.spacing.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(usage("--spacing must be a positive number of millimetres"));
    }
    if let Some(p) = &args.phantom_config {
        require_exists(p, "phantom configuration")?;
    }
    let mut phantom = layered_config(&PhantomConfig::default(), args.phantom_config.as_deref())?;
    phantom.seed = args.seed;
    phantom.validate()?;
    let train_args = super::train::Args::for_e2e(&args);
    let run = resolve(&train_args)?;
    run.validate()?;

    let data = args.out.join("data");
    eprintln!("[1/7] synthesizing {} cases", args.train_count + args.test_count);
    let cases = synthesize(&phantom, &data, args.train_count + args.test_count)?;

    eprintln!("[2/7] reconstructing volumes");
    for case in &cases {
        for ch in CHANNELS {
            let stack = read_any_stack(&case.stack(ch))?;
            write_any_volume(&case.volume(ch), &reconstruct_any(&stack, args.spacing, None)?)?;
        }
    }
    let (train_set, test_set) = cases.split_at(args.train_count);

    eprintln!("[3/7] training on {} cases", train_set.len());
    let loaded = load_cases(train_set)?;
    let (model, report, summary) = train_cases(&run, &loaded)?;
    let ckpt = args.out.join("model.ckpt");
    let mut outputs = write_outputs(&ckpt, &model, &report, &summary)?;

    eprintln!("[4/7] predicting, [5/7] post-processing, [6/7] projecting {} test cases", test_set.len());
    let pred_root = args.out.join("predictions");
    let mut triples: Vec<[PathBuf; 3]> = Vec::new();
    for case in test_set {
        let out = Case::new(&pred_root, &case.name);
        let image = read_volume::<f32>(&case.volume("image"))?;
        let pred = predict_volume(&model, &image, &run.predict).with_context(|| case.name.clone())?;
        write_volume(&out.volume("raw"), &pred.labels)?;
        let (post, _) = postprocess_volume(&pred.labels, 3, Connectivity::TwentySix, None)?;
        write_volume(&out.volume("labels"), &post)?;
        let geom = read_geometry(&case.stack("image"))?;
        let frames = project_to_frames(&post, &geom, Interp::Nearest, 0)?;
        write_stack(&out.stack("labels"), &frames)?;
        triples.push([out.stack("labels"), case.stack("labels"), case.stack("prostate")]);
    }

    eprintln!("[7/7] evaluating in the native frames");
    let names: Vec<String> = test_set.iter().map(|c| c.name.clone()).collect();
    let paths: Vec<[&Path; 3]> = triples.iter().map(|t| [t[0].as_path(), t[1].as_path(), t[2].as_path()]).collect();
    let opts = EvalOptions::default();
    let cohort = evaluate_paths(&names, &paths, &opts)?;
    outputs.extend(write_report(&args.out, &cohort)?);

    let config = json!({
        "phantom": phantom,
        "train": run,
        "eval": opts,
        "train_cases": args.train_count,
        "test_cases": args.test_count,
        "spacing_mm": args.spacing,
    });
    let inputs: Vec<&Path> = args.phantom_config.iter().chain(&args.config).map(PathBuf::as_path).collect();
    let outputs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.record("e2e", Some(args.seed), config, &inputs, &outputs)?
        .write(&args.out.join(PROVENANCE_FILE))?;
    print!("{}", cohort.to_csv());
    Ok(())
}

impl super::train::Args {
    fn for_e2e(a: &Args) -> Self {
        super::train::Args {
            data: PathBuf::new(),
            out: PathBuf::new(),
            preset: a.preset,
            config: a.config.clone(),
            epochs: a.epochs,
            seed: Some(a.seed),
            no_mem: a.no_mem,
            target_dsc: Some(a.target_dsc),
            eval_every: None,
        }
    }
}
