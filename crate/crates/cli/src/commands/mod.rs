pub mod e2e;
pub mod eval;
pub mod postproc;
pub mod predict;
pub mod scan;
pub mod stats;
pub mod synth;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use medmus_core::geometry::io::{read_any_stack, read_any_volume, AnyStack, AnyVolume};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// `base` overlaid with the JSON object in `path`, deserialized strictly so
/// that misspelled keys are rejected.
pub fn layered_config<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(path) = path {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut value, overlay);
    }
    serde_json::from_value(value).with_context(|| match path {
        Some(p) => format!("invalid configuration in {}", p.display()),
        None => "invalid configuration".into(),
    })
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        anyhow::bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A mask given either as a volume header or as a frame-stack directory.
pub enum Mask {
    Volume(medmus_core::geometry::LabelVolume),
    Stack(medmus_core::geometry::LabelStack),
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    require_exists(path, "mask")?;
    let wrong = || anyhow::anyhow!("{} holds intensities, not labels", path.display());
    if path.is_dir() {
        match read_any_stack(path)? {
            AnyStack::Label(s) => Ok(Mask::Stack(s)),
            AnyStack::Intensity(_) => Err(wrong()),
        }
    } else {
        match read_any_volume(path)? {
            AnyVolume::Label(v) => Ok(Mask::Volume(v)),
            AnyVolume::Intensity(_) => Err(wrong()),
        }
    }
}
