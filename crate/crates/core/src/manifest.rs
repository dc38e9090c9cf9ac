//! Dataset manifest: one JSON-lines record per sample group.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// One pose group: pose file, its image files, and the caption used to
/// generate them. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub format_version: u32,
    pub pose_id: String,
    pub pose_path: String,
    pub image_paths: Vec<String>,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for entry in &self.entries {
            serde_json::to_writer(&mut file, entry)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Read a manifest, checking version support and pose-id uniqueness.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            if entry.format_version != FORMAT_VERSION {
                return Err(Error::Data(format!(
                    "manifest line {}: unsupported format_version {}",
                    i + 1,
                    entry.format_version
                )));
            }
            if !seen.insert(entry.pose_id.clone()) {
                return Err(Error::Data(format!(
                    "duplicate pose_id `{}` in manifest",
                    entry.pose_id
                )));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    /// Read and additionally verify that every referenced file exists under
    /// `root`.
    pub fn read_validated(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = Self::read(root.join("manifest.jsonl"))?;
        for entry in &manifest.entries {
            let pose = root.join(&entry.pose_path);
            if !pose.is_file() {
                return Err(Error::Data(format!("missing pose file {}", pose.display())));
            }
            for img in &entry.image_paths {
                let img = root.join(img);
                if !img.is_file() {
                    return Err(Error::Data(format!("missing image file {}", img.display())));
                }
            }
        }
        Ok(manifest)
    }
}
