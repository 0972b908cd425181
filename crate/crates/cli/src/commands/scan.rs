use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use medmus_core::geometry::io::{read_any_stack, read_any_volume, read_geometry, write_stack, write_volume, AnyStack, AnyVolume};
use medmus_core::geometry::{project_to_frames, reconstruct_cartesian, FanGeometry, Interp};
use serde_json::json;

use super::require_exists;
use crate::provenance::{sidecar, Context};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Trilinear,
    Nearest,
}

impl From<InterpArg> for Interp {
    fn from(a: InterpArg) -> Self {
        match a {
            InterpArg::Trilinear => Interp::Trilinear,
            InterpArg::Nearest => Interp::Nearest,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct ReconstructArgs {
    /// Frame-stack directory (or its manifest).
    #[arg(long)]
    stack: PathBuf,
    /// Isotropic voxel size; defaults to the finer pixel spacing.
    #[arg(long)]
    spacing: Option<f64>,
    /// Output volume header (`.json`); the payload goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Defaults to trilinear for intensities and nearest for labels.
    #[arg(long, value_enum)]
    interp: Option<InterpArg>,
}

#[derive(Debug, clap::Args)]
pub struct ProjectArgs {
    #[arg(long)]
    vol: PathBuf,
    /// Stack manifest (or stack directory) whose geometry receives the volume.
    #[arg(long)]
    geom: PathBuf,
    /// Output frame-stack directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    interp: Option<InterpArg>,
}

fn default_interp(label: bool, requested: Option<InterpArg>) -> Result<Interp> {
    match (label, requested) {
        (true, Some(InterpArg::Trilinear)) => Err(usage("labels can only be resampled with --interp nearest")),
        (_, Some(i)) => Ok(i.into()),
        (true, None) => Ok(Interp::Nearest),
        (false, None) => Ok(Interp::Trilinear),
    }
}

pub fn reconstruct_any(stack: &AnyStack, spacing: Option<f64>, interp: Option<InterpArg>) -> Result<AnyVolume> {
    Ok(match stack {
        AnyStack::Intensity(s) => {
            let grid = s.geometry().covering_grid(spacing)?;
            AnyVolume::Intensity(reconstruct_cartesian(s, &grid, default_interp(false, interp)?, 0.0)?)
        }
        AnyStack::Label(s) => {
            let grid = s.geometry().covering_grid(spacing)?;
            AnyVolume::Label(reconstruct_cartesian(s, &grid, default_interp(true, interp)?, 0)?)
        }
    })
}

pub fn project_any(vol: &AnyVolume, geom: &FanGeometry, interp: Option<InterpArg>) -> Result<AnyStack> {
    Ok(match vol {
        AnyVolume::Intensity(v) => AnyStack::Intensity(project_to_frames(v, geom, default_interp(false, interp)?, 0.0)?),
        AnyVolume::Label(v) => AnyStack::Label(project_to_frames(v, geom, default_interp(true, interp)?, 0)?),
    })
}

pub fn write_any_volume(path: &Path, vol: &AnyVolume) -> Result<()> {
    match vol {
        AnyVolume::Intensity(v) => write_volume(path, v)?,
        AnyVolume::Label(v) => write_volume(path, v)?,
    }
    Ok(())
}

pub fn write_any_stack(path: &Path, stack: &AnyStack) -> Result<()> {
    match stack {
        AnyStack::Intensity(s) => write_stack(path, s)?,
        AnyStack::Label(s) => write_stack(path, s)?,
    }
    Ok(())
}

pub fn reconstruct(ctx: &Context, args: ReconstructArgs) -> Result<()> {
    if args.spacing.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(usage("--spacing must be a positive number of millimetres"));
    }
    require_exists(&args.stack, "stack")?;
    let stack = read_any_stack(&args.stack)?;
    let vol = reconstruct_any(&stack, args.spacing, args.interp)?;
    write_any_volume(&args.out, &vol)?;
    let config = json!({ "spacing_mm": args.spacing, "interp": args.interp.map(|i| format!("{i:?}").to_lowercase()) });
    ctx.record("reconstruct", None, config, &[&args.stack], &[&args.out])?
        .write(&sidecar(&args.out))
}

pub fn project(ctx: &Context, args: ProjectArgs) -> Result<()> {
    require_exists(&args.vol, "volume")?;
    require_exists(&args.geom, "geometry manifest")?;
    let vol = read_any_volume(&args.vol)?;
    let geom = read_geometry(&args.geom)?;
    let stack = project_any(&vol, &geom, args.interp)?;
    write_any_stack(&args.out, &stack)?;
    let config = json!({ "interp": args.interp.map(|i| format!("{i:?}").to_lowercase()) });
    ctx.record("project", None, config, &[&args.vol, &args.geom], &[&args.out])?
        .write(&sidecar(&args.out))
}
