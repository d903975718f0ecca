//! Dataset index: `frames/<id>.rad`, `labels/<id>.lbl` and `manifest.toml`
//! listing frame ids per split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use mvfan_core::RadarFrame;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST: &str = "manifest.toml";
pub const FRAMES_DIR: &str = "frames";
pub const LABELS_DIR: &str = "labels";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub splits: BTreeMap<String, Vec<String>>,
}

impl Manifest {
    /// Rejects ids that repeat within a split.
    pub fn validate(&self) -> Result<()> {
        for (split, ids) in &self.splits {
            let mut seen = BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::Validation(format!("split `{split}` lists frame `{id}` twice")));
                }
                if id.is_empty() || id.contains(['/', '\\']) || id.chars().any(char::is_whitespace) {
                    return Err(Error::Validation(format!("invalid frame id `{id}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl DatasetIndex {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            detail: e.message().to_string(),
        })?;
        manifest.validate()?;
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn splits(&self) -> Vec<String> {
        self.manifest.splits.keys().cloned().collect()
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.manifest.splits.get(name).map(Vec::as_slice).ok_or_else(|| Error::Split {
            requested: name.to_string(),
            available: self.splits(),
        })
    }

    pub fn points_path(&self, id: &str) -> PathBuf {
        self.root.join(FRAMES_DIR).join(format!("{id}.{}", io::POINT_EXT))
    }

    pub fn labels_path(&self, id: &str) -> PathBuf {
        self.root.join(LABELS_DIR).join(format!("{id}.{}", io::LABEL_EXT))
    }

    pub fn load(&self, id: &str) -> Result<RadarFrame> {
        io::load_frame_from(&self.points_path(id), &self.labels_path(id))
    }

    pub fn load_split(&self, name: &str) -> Result<Vec<RadarFrame>> {
        self.split(name)?.iter().map(|id| self.load(id)).collect()
    }
}

/// Writes frames and a manifest under `root`.
pub fn write_dataset(root: &Path, splits: &BTreeMap<String, Vec<RadarFrame>>) -> Result<DatasetIndex> {
    let mut manifest = Manifest::default();
    for (name, frames) in splits {
        manifest
            .splits
            .insert(name.clone(), frames.iter().map(|f| f.frame_id.clone()).collect());
    }
    manifest.validate()?;
    let frames_dir = root.join(FRAMES_DIR);
    let labels_dir = root.join(LABELS_DIR);
    for d in [&frames_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        manifest,
    };
    for f in splits.values().flatten() {
        io::write_points(&index.points_path(&f.frame_id), &f.points)?;
        io::write_labels(&index.labels_path(&f.frame_id), &f.boxes)?;
    }
    let path = root.join(MANIFEST);
    let text = toml::to_string(&index.manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Adds or replaces one split, creating the dataset when `root` has no
/// manifest yet. Frames of other splits are left alone.
pub fn add_split(root: &Path, name: &str, frames: &[RadarFrame]) -> Result<DatasetIndex> {
    let mut manifest = if root.join(MANIFEST).exists() {
        DatasetIndex::open(root)?.manifest
    } else {
        Manifest::default()
    };
    manifest
        .splits
        .insert(name.to_string(), frames.iter().map(|f| f.frame_id.clone()).collect());
    manifest.validate()?;
    for d in [root.join(FRAMES_DIR), root.join(LABELS_DIR)] {
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        manifest,
    };
    for f in frames {
        io::write_points(&index.points_path(&f.frame_id), &f.points)?;
        io::write_labels(&index.labels_path(&f.frame_id), &f.boxes)?;
    }
    let path = root.join(MANIFEST);
    let text = toml::to_string(&index.manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}
