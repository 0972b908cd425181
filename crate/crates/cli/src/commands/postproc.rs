use std::path::PathBuf;

use anyhow::Result;
use medmus_core::geometry::io::{write_stack, write_volume};
use medmus_core::geometry::LabelVolume;
use medmus_core::postproc::{
    postprocess, postprocess_frames, scaled_min_pixels, scaled_min_voxels, Connectivity, PostprocConfig,
};
use serde_json::json;

use super::{read_mask, Mask};
use crate::provenance::{sidecar, Context};
use crate::usage;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Binary mask: a volume header, or a frame-stack directory for per-frame 2D processing.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Smallest component kept; defaults to the reference size scaled to the voxel (or pixel) size.
    #[arg(long)]
    min_voxels: Option<usize>,
    /// 6 or 26 (volumes only; frames use 8-connectivity).
    #[arg(long, default_value_t = 26)]
    connectivity: u32,
    /// Edge length of the cubic closing element, odd; 1 disables closing.
    #[arg(long, default_value_t = 3)]
    kernel: usize,
}

/// Volume post-processing with the size threshold scaled to the grid unless given.
pub fn postprocess_volume(mask: &LabelVolume, kernel: usize, connectivity: Connectivity, min_voxels: Option<usize>) -> Result<(LabelVolume, PostprocConfig)> {
    let cfg = PostprocConfig {
        kernel,
        connectivity,
        min_voxels: min_voxels.unwrap_or_else(|| scaled_min_voxels(mask.grid().voxel_volume_mm3())),
    };
    Ok((postprocess(mask, &cfg)?, cfg))
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let connectivity = Connectivity::from_count(args.connectivity).map_err(|e| usage(e.to_string()))?;
    if args.kernel == 0 || args.kernel % 2 == 0 {
        return Err(usage("--kernel must be odd"));
    }
    let config = match read_mask(&args.input)? {
        Mask::Volume(v) => {
            let (out, cfg) = postprocess_volume(&v, args.kernel, connectivity, args.min_voxels)?;
            super::create_parent(&args.out)?;
            write_volume(&args.out, &out)?;
            serde_json::to_value(cfg)?
        }
        Mask::Stack(s) => {
            let g = s.geometry();
            let min = args
                .min_voxels
                .unwrap_or_else(|| scaled_min_pixels(g.pixel_spacing_mm[0] * g.pixel_spacing_mm[1]));
            let out = postprocess_frames(&s, args.kernel, min)?;
            write_stack(&args.out, &out)?;
            json!({ "kernel": args.kernel, "connectivity": 8, "min_pixels": min })
        }
    };
    ctx.record("postproc", None, config, &[&args.input], &[&args.out])?
        .write(&sidecar(&args.out))
}
