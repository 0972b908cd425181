//! On-disk formats.
//!
//! A frame stack is a directory holding `manifest.json` plus one raw file per
//! frame. Frame pixels are stored row-major with depth rows and probe-axis
//! columns (radial major, axial minor): `f32` little-endian for intensities,
//! `u8` for labels.
//!
//! A volume is a JSON header next to a raw payload with the same stem and a
//! `.raw` extension, x fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fan::{FanGeometry, FrameStack};
use super::volume::{GridSpec, Payload, PayloadKind, Volume};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const STACK_FORMAT: &str = "medmus-frame-stack";
const VOLUME_FORMAT: &str = "medmus-volume";
const STACK_LAYOUT: &str = "radial-major";
const VOLUME_ORDER: &str = "x-fastest";

/// Little-endian raw encoding of a payload type.
pub trait RawSample: Payload {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl RawSample for f32 {
    const DTYPE: &'static str = "f32le";
    const BYTES: usize = 4;

    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl RawSample for u8 {
    const DTYPE: &'static str = "u8";
    const BYTES: usize = 1;

    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn take(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

fn encode<T: RawSample>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.put(&mut out);
    }
    out
}

fn decode<T: RawSample>(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<T>> {
    if bytes.len() != expected * T::BYTES {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("expected {} bytes, found {}", expected * T::BYTES, bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(T::BYTES).map(T::take).collect())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub file: String,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub format: String,
    pub version: u32,
    pub payload: PayloadKind,
    pub dtype: String,
    pub layout: String,
    pub geometry: FanGeometry,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub format: String,
    pub version: u32,
    pub payload: PayloadKind,
    pub dtype: String,
    pub order: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub data_file: String,
}

/// A frame stack whose payload kind is only known at run time.
#[derive(Debug, Clone)]
pub enum AnyStack {
    Intensity(FrameStack<f32>),
    Label(FrameStack<u8>),
}

/// A volume whose payload kind is only known at run time.
#[derive(Debug, Clone)]
pub enum AnyVolume {
    Intensity(Volume<f32>),
    Label(Volume<u8>),
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_owned()
    }
}

pub fn read_manifest(path: &Path) -> Result<StackManifest> {
    let path = manifest_path(path);
    let m: StackManifest = read_json(&path)?;
    let bad = |reason: String| Error::Format {
        path: path.clone(),
        reason,
    };
    if m.format != STACK_FORMAT || m.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.layout != STACK_LAYOUT {
        return Err(bad(format!("unsupported layout {}", m.layout)));
    }
    m.geometry.validate()?;
    if m.frames.len() != m.geometry.frame_count() {
        return Err(bad("frame list does not match geometry angles".into()));
    }
    for (f, &a) in m.frames.iter().zip(&m.geometry.angles_deg) {
        if f.angle_deg != a {
            return Err(bad(format!("frame {} angle {} disagrees with geometry", f.file, f.angle_deg)));
        }
    }
    Ok(m)
}

/// Geometry from a stack directory or manifest file.
pub fn read_geometry(path: &Path) -> Result<FanGeometry> {
    Ok(read_manifest(path)?.geometry)
}

pub fn write_stack<T: RawSample>(dir: &Path, stack: &FrameStack<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let geometry = stack.geometry().clone();
    let mut frames = Vec::with_capacity(geometry.frame_count());
    for (i, frame) in stack.frames().iter().enumerate() {
        let file = format!("frame_{i:04}.raw");
        write_bytes(&dir.join(&file), &encode(frame))?;
        frames.push(FrameEntry {
            file,
            angle_deg: geometry.angles_deg[i],
        });
    }
    let manifest = StackManifest {
        format: STACK_FORMAT.into(),
        version: FORMAT_VERSION,
        payload: T::KIND,
        dtype: T::DTYPE.into(),
        layout: STACK_LAYOUT.into(),
        geometry,
        frames,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_stack<T: RawSample>(dir: &Path) -> Result<FrameStack<T>> {
    let m = read_manifest(dir)?;
    let dir = if dir.is_dir() { dir } else { dir.parent().unwrap_or(Path::new(".")) };
    if m.payload != T::KIND || m.dtype != T::DTYPE {
        return Err(Error::Format {
            path: dir.join(MANIFEST_FILE),
            reason: format!("payload {:?}/{} where {:?} was expected", m.payload, m.dtype, T::KIND),
        });
    }
    let n = m.geometry.frame_len();
    let frames = m
        .frames
        .iter()
        .map(|f| {
            let p = dir.join(&f.file);
            decode::<T>(&p, &read_bytes(&p)?, n)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(m.geometry, frames)
}

pub fn read_any_stack(dir: &Path) -> Result<AnyStack> {
    match read_manifest(dir)?.payload {
        PayloadKind::Intensity => read_stack(dir).map(AnyStack::Intensity),
        PayloadKind::Label => read_stack(dir).map(AnyStack::Label),
    }
}

fn data_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn write_volume<T: RawSample>(header: &Path, vol: &Volume<T>) -> Result<()> {
    if let Some(parent) = header.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let data = data_path(header);
    let g = vol.grid();
    let h = VolumeHeader {
        format: VOLUME_FORMAT.into(),
        version: FORMAT_VERSION,
        payload: T::KIND,
        dtype: T::DTYPE.into(),
        order: VOLUME_ORDER.into(),
        dims: g.dims,
        spacing_mm: g.spacing_mm,
        origin_mm: g.origin_mm,
        data_file: data
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Input(format!("bad volume path {}", header.display())))?
            .to_owned(),
    };
    write_bytes(&data, &encode(vol.data()))?;
    write_json(header, &h)
}

pub fn read_volume_header(header: &Path) -> Result<VolumeHeader> {
    let h: VolumeHeader = read_json(header)?;
    if h.format != VOLUME_FORMAT || h.version != FORMAT_VERSION || h.order != VOLUME_ORDER {
        return Err(Error::Format {
            path: header.to_owned(),
            reason: format!("unsupported volume format {} v{} ({})", h.format, h.version, h.order),
        });
    }
    Ok(h)
}

pub fn read_volume<T: RawSample>(header: &Path) -> Result<Volume<T>> {
    let h = read_volume_header(header)?;
    if h.payload != T::KIND || h.dtype != T::DTYPE {
        return Err(Error::Format {
            path: header.to_owned(),
            reason: format!("payload {:?}/{} where {:?} was expected", h.payload, h.dtype, T::KIND),
        });
    }
    let grid = GridSpec::new(h.dims, h.spacing_mm, h.origin_mm)?;
    let p = header.parent().unwrap_or(Path::new(".")).join(&h.data_file);
    let data = decode::<T>(&p, &read_bytes(&p)?, grid.len())?;
    Volume::from_data(grid, data)
}

pub fn read_any_volume(header: &Path) -> Result<AnyVolume> {
    match read_volume_header(header)?.payload {
        PayloadKind::Intensity => read_volume(header).map(AnyVolume::Intensity),
        PayloadKind::Label => read_volume(header).map(AnyVolume::Label),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = FanGeometry::sweep(10.0, 3, 2, [0.1, 0.2], -5.0, 5.0, 3).unwrap();
        let frames = (0..3)
            .map(|f| (0..6).map(|i| (f * 10 + i) as f32 * 0.5).collect())
            .collect();
        let stack = FrameStack::new(g, frames).unwrap();
        write_stack(dir.path(), &stack).unwrap();
        let back: FrameStack<f32> = read_stack(dir.path()).unwrap();
        assert_eq!(back, stack);
        assert!(read_stack::<u8>(dir.path()).is_err());
        assert!(matches!(read_any_stack(dir.path()).unwrap(), AnyStack::Intensity(_)));
    }

    #[test]
    fn frame_bytes_are_radial_major_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let g = FanGeometry::new(0.0, 2, 2, [1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let stack = FrameStack::new(g, vec![vec![1.0f32, 2.0, 3.0, 4.0], vec![0.0; 4]]).unwrap();
        write_stack(dir.path(), &stack).unwrap();
        let bytes = fs::read(dir.path().join("frame_0000.raw")).unwrap();
        assert_eq!(&bytes[4..8], &2.0f32.to_le_bytes());
        // second row (v = 1), first column (u = 0)
        assert_eq!(stack.get(0, 1, 0), 3.0);
    }

    #[test]
    fn volume_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new([3, 2, 2], [0.5, 0.5, 1.0], [1.0, -2.0, 0.0]).unwrap();
        let vol = Volume::from_data(grid, (0..12u8).map(|v| v % 2).collect()).unwrap();
        let header = dir.path().join("mask.json");
        write_volume(&header, &vol).unwrap();
        assert_eq!(read_volume::<u8>(&header).unwrap(), vol);
        assert!(read_volume::<f32>(&header).is_err());
        fs::write(dir.path().join("mask.raw"), [0u8; 5]).unwrap();
        assert!(matches!(read_volume::<u8>(&header), Err(Error::Format { .. })));
    }
}
