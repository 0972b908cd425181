use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::ValueEnum;
use medmus_core::geometry::io::{read_volume, write_volume};
use medmus_core::model::{predict_volume, Model, PredictOptions, WindowWeighting};
use serde_json::json;

use super::require_exists;
use crate::provenance::{sidecar, Context};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Uniform,
    Gaussian,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Intensity volume header.
    #[arg(long)]
    vol: PathBuf,
    /// Output label volume header.
    #[arg(long)]
    out: PathBuf,
    /// Also write the foreground probability volume here.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Fraction of a window shared with its neighbours.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, value_enum, default_value_t = WeightingArg::Gaussian)]
    weighting: WeightingArg,
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    if !(0.0..1.0).contains(&args.overlap) {
        return Err(usage("--overlap must lie in [0, 1)"));
    }
    require_exists(&args.model, "model")?;
    require_exists(&args.vol, "volume")?;
    let model = load_model(&args.model)?;
    let vol = read_volume::<f32>(&args.vol)?;
    let opts = PredictOptions {
        overlap: args.overlap,
        weighting: match args.weighting {
            WeightingArg::Uniform => WindowWeighting::Uniform,
            WeightingArg::Gaussian => WindowWeighting::Gaussian,
        },
    };
    let pred = predict_volume(&model, &vol, &opts)?;
    super::create_parent(&args.out)?;
    write_volume(&args.out, &pred.labels)?;
    let mut outputs = vec![args.out.as_path()];
    if let Some(p) = &args.probs {
        super::create_parent(p)?;
        write_volume(p, &pred.foreground)?;
        outputs.push(p);
    }
    let config = json!({ "predict": opts, "model": model.config() });
    ctx.record("predict", None, config, &[&args.model, &args.vol], &outputs)?
        .write(&sidecar(&args.out))
}
