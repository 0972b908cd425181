use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::ValueEnum;
use medmus_core::evaluation::dsc;
use medmus_core::geometry::io::read_volume;
use medmus_core::geometry::{IntensityVolume, LabelVolume};
use medmus_core::model::{
    normalize_intensity, predict_volume, train, Control, Model, ModelConfig, PredictOptions, Sample, TrainConfig,
    TrainReport,
};
use medmus_core::tensor::{OptimizerConfig, OptimizerKind};
use serde::{Deserialize, Serialize};

use super::{layered_config, require_exists, write_text};
use crate::layout::{list_cases, Case};
use crate::provenance::{sidecar, Context};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Four levels, 16x48x64 patches, Adam; sized for a laptop CPU.
    Desk,
    /// Six levels, 32x192x256 patches, SGD with Nesterov momentum.
    Paper,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the weight initialization.
    pub model_seed: u64,
    /// Stop once the mean training-set DSC reaches this value.
    pub target_dsc: Option<f64>,
    /// Epochs between training-set evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub predict: PredictOptions,
}

impl TrainRun {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => TrainRun {
                model: ModelConfig::desk(),
                train: TrainConfig {
                    optimizer: OptimizerConfig {
                        kind: OptimizerKind::Adam,
                        lr: 3e-3,
                        momentum: 0.9,
                        ..Default::default()
                    },
                    ..Default::default()
                },
                model_seed: 0,
                target_dsc: None,
                eval_every: 5,
                predict: PredictOptions::default(),
            },
            Preset::Paper => TrainRun {
                model: ModelConfig::paper(),
                train: TrainConfig::default(),
                model_seed: 0,
                target_dsc: None,
                eval_every: 10,
                predict: PredictOptions::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            anyhow::bail!("batch_size must be positive");
        }
        if let Some(t) = self.target_dsc {
            if !(0.0..=1.0).contains(&t) {
                anyhow::bail!("target_dsc {t} outside [0, 1]");
            }
        }
        if !(0.0..1.0).contains(&self.predict.overlap) {
            anyhow::bail!("overlap {} outside [0, 1)", self.predict.overlap);
        }
        Ok(())
    }
}

/// Outcome of a training run, written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub cases: Vec<String>,
    pub parameters: usize,
    pub epochs_run: usize,
    pub steps: u64,
    pub stopped_early: bool,
    pub final_loss: f64,
    /// `(epoch, mean training-set DSC)` at every evaluation.
    pub dsc_history: Vec<(usize, f64)>,
    pub final_train_dsc: Option<f64>,
    pub reached_target: bool,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Cohort root holding `case_*/volume/{image,labels}.json`.
    #[arg(long)]
    pub(crate) data: PathBuf,
    /// Checkpoint path; the loss curve, summary and provenance go next to it.
    #[arg(long)]
    pub(crate) out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub(crate) preset: Preset,
    /// JSON overrides of the preset (`model`, `train`, `model_seed`, ...).
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    #[arg(long)]
    pub(crate) epochs: Option<usize>,
    /// Seeds both the initialization and the batch order.
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Train the plain deeply supervised backbone.
    #[arg(long)]
    pub(crate) no_mem: bool,
    #[arg(long)]
    pub(crate) target_dsc: Option<f64>,
    #[arg(long)]
    pub(crate) eval_every: Option<usize>,
}

/// A case loaded for training and training-set evaluation.
pub struct TrainingCase {
    pub name: String,
    pub image: IntensityVolume,
    pub labels: LabelVolume,
}

pub fn load_cases(cases: &[Case]) -> Result<Vec<TrainingCase>> {
    cases
        .iter()
        .map(|c| {
            let image = read_volume::<f32>(&c.volume("image"))
                .with_context(|| format!("{}: missing reconstructed image, run reconstruct first", c.name))?;
            let labels = read_volume::<u8>(&c.volume("labels"))
                .with_context(|| format!("{}: missing reconstructed labels", c.name))?;
            if image.grid() != labels.grid() {
                anyhow::bail!("{}: image and label grids differ", c.name);
            }
            Ok(TrainingCase {
                name: c.name.clone(),
                image,
                labels,
            })
        })
        .collect()
}

fn to_sample(c: &TrainingCase) -> Result<Sample> {
    let [nx, ny, nz] = c.image.dims();
    Ok(Sample::new(
        [nz, ny, nx],
        normalize_intensity(c.image.data()),
        c.labels.data().iter().map(|&v| u8::from(v != 0)).collect(),
    )?)
}

/// Mean DSC of argmax predictions over the cases where it is defined.
pub fn mean_dsc(model: &Model<f32>, cases: &[TrainingCase], opts: &PredictOptions) -> medmus_core::Result<Option<f64>> {
    let mut values = Vec::new();
    for c in cases {
        let pred = predict_volume(model, &c.image, opts)?;
        let gt = c.labels.map(|v| u8::from(v != 0));
        if let Some(d) = dsc(&pred.labels, &gt)? {
            values.push(d);
        }
    }
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

/// Train on `cases`; progress goes to stderr.
pub fn train_cases(run: &TrainRun, cases: &[TrainingCase]) -> Result<(Model<f32>, TrainReport, TrainSummary)> {
    run.validate()?;
    if cases.is_empty() {
        anyhow::bail!("no training cases");
    }
    let samples = cases.iter().map(to_sample).collect::<Result<Vec<_>>>()?;
    let mut model = Model::<f32>::build(&run.model, run.model_seed)?;
    let epochs = run.train.epochs;
    let start = Instant::now();
    let mut history = Vec::new();
    let report = train(&mut model, &samples, &run.train, |m, rec| {
        let last = rec.epoch + 1 == epochs;
        let due = run.eval_every > 0 && (rec.epoch + 1) % run.eval_every == 0;
        let mut line = format!("epoch {:>3} loss {:.4} lr {:.2e}", rec.epoch, rec.loss.total, rec.lr);
        let mut control = Control::Continue;
        if due || last {
            let d = mean_dsc(m, cases, &run.predict)?.unwrap_or(0.0);
            history.push((rec.epoch, d));
            line += &format!(" train dsc {d:.4}");
            if run.target_dsc.is_some_and(|t| d >= t) {
                control = Control::Stop;
            }
        }
        eprintln!("{line} ({:.0} s)", start.elapsed().as_secs_f64());
        Ok(control)
    })?;
    let epochs_run = report.curve.len();
    let final_train_dsc = match history.last() {
        Some(&(e, d)) if e + 1 == epochs_run => Some(d),
        _ => mean_dsc(&model, cases, &run.predict)?,
    };
    let summary = TrainSummary {
        cases: cases.iter().map(|c| c.name.clone()).collect(),
        parameters: model.params().count(),
        epochs_run,
        steps: report.steps,
        stopped_early: report.stopped_early,
        final_loss: report.curve.last().map_or(f64::NAN, |r| r.loss.total),
        dsc_history: history,
        final_train_dsc,
        reached_target: match (run.target_dsc, final_train_dsc) {
            (Some(t), Some(d)) => d >= t,
            _ => false,
        },
    };
    Ok((model, report, summary))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn curve_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".curve.csv")
}

pub fn summary_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".train.json")
}

/// Save the checkpoint, loss curve and summary; returns the written paths.
pub fn write_outputs(out: &Path, model: &Model<f32>, report: &TrainReport, summary: &TrainSummary) -> Result<Vec<PathBuf>> {
    super::create_parent(out)?;
    model.save(out)?;
    write_text(&curve_path(out), &report.curve_csv())?;
    write_text(&summary_path(out), &(serde_json::to_string_pretty(summary)? + "\n"))?;
    Ok(vec![out.to_owned(), curve_path(out), summary_path(out)])
}

pub fn resolve(args: &Args) -> Result<TrainRun> {
    let mut run = layered_config(&TrainRun::preset(args.preset), args.config.as_deref())?;
    if let Some(e) = args.epochs {
        run.train.epochs = e;
    }
    if let Some(s) = args.seed {
        run.train.seed = s;
        run.model_seed = s;
    }
    if args.no_mem {
        run.model.mem_enabled = false;
    }
    if let Some(t) = args.target_dsc {
        run.target_dsc = Some(t);
    }
    if let Some(e) = args.eval_every {
        run.eval_every = e;
    }
    Ok(run)
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    if args.epochs == Some(0) {
        return Err(usage("--epochs must be at least 1"));
    }
    if args.target_dsc.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
        return Err(usage("--target-dsc must lie in [0, 1]"));
    }
    require_exists(&args.data, "data directory")?;
    let run = resolve(&args)?;
    run.validate()?;
    let cases = list_cases(&args.data)?;
    if cases.is_empty() {
        anyhow::bail!("no case_* directories under {}", args.data.display());
    }
    let loaded = load_cases(&cases)?;
    let (model, report, summary) = train_cases(&run, &loaded)?;
    let written = write_outputs(&args.out, &model, &report, &summary)?;
    let inputs: Vec<PathBuf> = cases.iter().flat_map(|c| [c.volume("image"), c.volume("labels")]).collect();
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).chain(args.config.as_deref()).collect();
    let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    ctx.record("train", Some(run.train.seed), serde_json::to_value(&run)?, &inputs, &outputs)?
        .write(&sidecar(&args.out))?;
    match summary.final_train_dsc {
        Some(d) => eprintln!("trained {} epochs, training-set DSC {d:.4}", summary.epochs_run),
        None => eprintln!("trained {} epochs", summary.epochs_run),
    }
    Ok(())
}
