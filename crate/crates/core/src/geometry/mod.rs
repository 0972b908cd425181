//! Fan-beam acquisition geometry and Cartesian resampling.

mod fan;
pub mod io;
mod scan;
mod volume;

pub use fan::{
    FanCoord, FanGeometry, FrameStack, IntensityStack, LabelStack, DEFAULT_PROBE_RADIUS_MM,
};
pub use scan::{coverage_mask, project_to_frames, reconstruct_cartesian, Interp};
pub use volume::{GridSpec, IntensityVolume, LabelVolume, Payload, PayloadKind, Volume};
