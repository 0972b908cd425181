//! Directory layout of a synthetic cohort.
//!
//! ```text
//! <root>/case_000/frames/{image,labels,prostate}/   frame stacks
//! <root>/case_000/volume/{image,labels,prostate}.json  reconstructed volumes
//! <root>/case_000/scene.json                        phantom scene
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const FRAMES_DIR: &str = "frames";
pub const VOLUME_DIR: &str = "volume";
pub const SCENE_FILE: &str = "scene.json";

/// Channels stored for every case.
pub const CHANNELS: [&str; 3] = ["image", "labels", "prostate"];

pub fn case_name(i: usize) -> String {
    format!("case_{i:03}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub name: String,
    pub dir: PathBuf,
}

impl Case {
    pub fn new(root: &Path, name: &str) -> Self {
        Case {
            name: name.to_owned(),
            dir: root.join(name),
        }
    }

    pub fn stack(&self, channel: &str) -> PathBuf {
        self.dir.join(FRAMES_DIR).join(channel)
    }

    pub fn volume(&self, channel: &str) -> PathBuf {
        self.dir.join(VOLUME_DIR).join(format!("{channel}.json"))
    }

    pub fn scene(&self) -> PathBuf {
        self.dir.join(SCENE_FILE)
    }
}

/// Case directories (names starting with `case_`) under `root`, sorted.
pub fn list_cases(root: &Path) -> Result<Vec<Case>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("case_") && entry.path().is_dir() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names.iter().map(|n| Case::new(root, n)).collect())
}
