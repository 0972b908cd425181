use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use medmus_core::evaluation::{evaluate_cohort, CohortReport, EvalOptions, LabelGrid, MatchOptions, OverlapMode};
use medmus_core::postproc::Connectivity;

use super::{read_mask, write_text, Mask};
use crate::provenance::{Context, PROVENANCE_FILE};
use crate::usage;

pub const CSV_FILE: &str = "metrics.csv";
pub const JSON_FILE: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapArg {
    /// Intersection over ground-truth lesion size.
    Gt,
    Iou,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Predicted mask, once per case (volume header or frame-stack directory).
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth lesion mask, in the same order as --pred.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Prostate mask, in the same order as --pred.
    #[arg(long, required = true)]
    prostate: Vec<PathBuf>,
    /// Case names; default case_000, case_001, ...
    #[arg(long)]
    case: Vec<String>,
    #[arg(long, default_value_t = 13)]
    sectors: usize,
    #[arg(long, default_value_t = 3)]
    thirds: usize,
    /// A lesion is detected when the overlap exceeds this fraction.
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = OverlapArg::Gt)]
    overlap: OverlapArg,
    #[arg(long, default_value_t = 26)]
    connectivity: u32,
    /// Foreground samples needed for a sector to count as positive.
    #[arg(long, default_value_t = 1)]
    sector_min_voxels: usize,
    /// Output directory for metrics.csv and metrics.json.
    #[arg(long)]
    out: PathBuf,
}

fn cohort<G: LabelGrid + Sync>(names: &[String], triples: &[(G, G, G)], opts: &EvalOptions) -> Result<CohortReport> {
    let cases: Vec<(&str, &G, &G, &G)> = names
        .iter()
        .zip(triples)
        .map(|(n, (p, g, m))| (n.as_str(), p, g, m))
        .collect();
    Ok(evaluate_cohort(&cases, opts)?)
}

/// Evaluate cases given as mask paths; all masks must be volumes or all frame stacks.
pub fn evaluate_paths(names: &[String], cases: &[[&Path; 3]], opts: &EvalOptions) -> Result<CohortReport> {
    let mut volumes = Vec::new();
    let mut stacks = Vec::new();
    for paths in cases {
        match paths.map(read_mask) {
            [Ok(Mask::Volume(p)), Ok(Mask::Volume(g)), Ok(Mask::Volume(m))] => volumes.push((p, g, m)),
            [Ok(Mask::Stack(p)), Ok(Mask::Stack(g)), Ok(Mask::Stack(m))] => stacks.push((p, g, m)),
            [Err(e), ..] | [_, Err(e), _] | [.., Err(e)] => return Err(e),
            _ => anyhow::bail!("masks must all be volumes or all frame stacks"),
        }
    }
    if !volumes.is_empty() && !stacks.is_empty() {
        anyhow::bail!("masks must all be volumes or all frame stacks");
    }
    if stacks.is_empty() {
        cohort(names, &volumes, opts)
    } else {
        cohort(names, &stacks, opts)
    }
}

/// Write metrics.csv and metrics.json under `dir`; returns the paths.
pub fn write_report(dir: &Path, report: &CohortReport) -> Result<[PathBuf; 2]> {
    let csv = dir.join(CSV_FILE);
    let json = dir.join(JSON_FILE);
    write_text(&csv, &report.to_csv())?;
    write_text(&json, &(report.to_json() + "\n"))?;
    Ok([csv, json])
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let n = args.pred.len();
    if args.gt.len() != n || args.prostate.len() != n {
        return Err(usage("--pred, --gt and --prostate must be given the same number of times"));
    }
    if !args.case.is_empty() && args.case.len() != n {
        return Err(usage("--case must be given once per --pred or not at all"));
    }
    if !(0.0..1.0).contains(&args.threshold) {
        return Err(usage("--threshold must lie in [0, 1)"));
    }
    if args.sectors == 0 || args.thirds == 0 {
        return Err(usage("--sectors and --thirds must be positive"));
    }
    let connectivity = Connectivity::from_count(args.connectivity).map_err(|e| usage(e.to_string()))?;
    let opts = EvalOptions {
        sectors: args.sectors,
        thirds: args.thirds,
        matching: MatchOptions {
            threshold: args.threshold,
            mode: match args.overlap {
                OverlapArg::Gt => OverlapMode::GtFraction,
                OverlapArg::Iou => OverlapMode::Iou,
            },
        },
        connectivity,
        sector_min_voxels: args.sector_min_voxels,
    };
    let names: Vec<String> = if args.case.is_empty() {
        (0..n).map(crate::layout::case_name).collect()
    } else {
        args.case.clone()
    };
    let triples: Vec<[&Path; 3]> = (0..n)
        .map(|i| [args.pred[i].as_path(), args.gt[i].as_path(), args.prostate[i].as_path()])
        .collect();
    let report = evaluate_paths(&names, &triples, &opts)?;
    let written = write_report(&args.out, &report)?;
    let inputs: Vec<&Path> = triples.iter().flatten().copied().collect();
    let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    ctx.record("eval", None, serde_json::to_value(opts)?, &inputs, &outputs)?
        .write(&args.out.join(PROVENANCE_FILE))?;
    print!("{}", report.to_csv());
    Ok(())
}
