use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use medmus_core::geometry::io::write_stack;
use medmus_core::phantom::{generate, PhantomConfig};

use super::{layered_config, write_text};
use crate::layout::{case_name, Case};
use crate::provenance::{Context, PROVENANCE_FILE};
use crate::usage;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Phantom configuration (JSON); omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, one `case_NNN` subdirectory per phantom.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Base seed, overriding the configuration; case `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
}

/// Write `count` phantoms under `out`, seeding case `i` with `cfg.seed + i`.
pub fn synthesize(cfg: &PhantomConfig, out: &Path, count: usize) -> Result<Vec<Case>> {
    let mut cases = Vec::with_capacity(count);
    for i in 0..count {
        let case_cfg = PhantomConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let ph = generate(&case_cfg).with_context(|| format!("phantom {i}"))?;
        let case = Case::new(out, &case_name(i));
        write_stack(&case.stack("image"), &ph.intensity)?;
        write_stack(&case.stack("labels"), &ph.labels)?;
        write_stack(&case.stack("prostate"), &ph.prostate_frames)?;
        write_text(&case.scene(), &(serde_json::to_string_pretty(&ph.scene)? + "\n"))?;
        cases.push(case);
    }
    Ok(cases)
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let mut cfg = layered_config(&PhantomConfig::default(), args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    synthesize(&cfg, &args.out, args.count)?;
    let inputs: Vec<&Path> = args.config.as_deref().into_iter().collect();
    ctx.record("synth", Some(cfg.seed), serde_json::to_value(&cfg)?, &inputs, &[&args.out])?
        .write(&args.out.join(PROVENANCE_FILE))?;
    eprintln!("wrote {} cases to {}", args.count, args.out.display());
    Ok(())
}
